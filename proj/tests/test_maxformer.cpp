#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avlip/maxformer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <map>

using namespace avlip;
using avlip::testing::fd_max_rel_err;
using avlip::testing::multi_head_transfer_oracle;
using avlip::testing::random_matrix;
using avlip::testing::random_tensor;

namespace {

std::map<std::string, TensorPtr> param_map(const ParamList& params) {
  std::map<std::string, TensorPtr> m;
  for (const auto& p : params) m.emplace(p.name, p.tensor);
  return m;
}

}  // namespace

TEST_CASE("single head with one key frame copies the projected value") {
  Rng rng(1);
  const Index d = 6, d_h = 3;
  auto wq = random_tensor({d, d_h}, rng);
  auto wk = random_tensor({d, d_h}, rng);
  auto wv = random_tensor({d, d_h}, rng);
  auto q = random_tensor({d, 4}, rng, false);
  auto kv = random_tensor({d, 1}, rng, false);
  Tape tape;
  TensorPtr attn;
  auto out = single_head_transfer(tape, q, kv, kv, wq, wk, wv, 1.0, &attn);
  CHECK(out->rows() == d_h);
  CHECK(out->cols() == 4);
  CHECK((attn->values() - 1.0).abs().maxCoeff() == 0.0);
  const Vector expect = wv->mat().transpose() * kv->mat();
  for (Index t = 0; t < 4; ++t)
    CHECK((out->mat().col(t) - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zero query projection gives uniform attention over keys") {
  Rng rng(2);
  const Index d = 6, d_h = 2, t_k = 5;
  auto wq = make_tensor({d, d_h}, true);  // zeros
  auto wk = random_tensor({d, d_h}, rng);
  auto wv = random_tensor({d, d_h}, rng);
  auto q = random_tensor({d, 3}, rng, false);
  auto kv = random_tensor({d, t_k}, rng, false);
  Tape tape;
  auto out = single_head_transfer(tape, q, kv, kv, wq, wk, wv, 0.41, nullptr);
  const Matrix vp = wv->mat().transpose() * kv->mat();  // d_h x t_k
  const Vector mean = vp.rowwise().mean();
  for (Index t = 0; t < 3; ++t)
    CHECK((out->mat().col(t) - mean).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("single head matches a dense 2x3 oracle") {
  Rng rng(3);
  const Index d = 4, d_h = 2;
  auto wq = random_tensor({d, d_h}, rng);
  auto wk = random_tensor({d, d_h}, rng);
  auto wv = random_tensor({d, d_h}, rng);
  auto q = random_tensor({d, 2}, rng, false);
  auto kv = random_tensor({d, 3}, rng, false);
  const Scalar inv_scale = 1.0 / std::sqrt(static_cast<Scalar>(d));
  Tape tape;
  auto out = single_head_transfer(tape, q, kv, kv, wq, wk, wv, inv_scale, nullptr);

  const Matrix qp = q->mat().transpose() * wq->mat();
  const Matrix kp = kv->mat().transpose() * wk->mat();
  const Matrix vp = kv->mat().transpose() * wv->mat();
  Matrix scores = inv_scale * (qp * kp.transpose());
  Matrix attn(2, 3);
  for (Index r = 0; r < 2; ++r) {
    const Scalar mx = scores.row(r).maxCoeff();
    const auto e = (scores.row(r).array() - mx).exp();
    attn.row(r) = e / e.sum();
  }
  const Matrix expect = (attn * vp).transpose();
  CHECK((out->mat() - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("multi-head with one head equals single head plus projection") {
  Rng rng(4);
  MaxFormerBlock block(6, 1, 12, true, rng);
  auto q = random_tensor({6, 4}, rng, false);
  auto kv = random_tensor({6, 7}, rng, false);
  Tape tape;
  auto multi = block.transfer(tape, q, kv);
  const auto& h = block.heads()[0];
  auto single =
      single_head_transfer(tape, q, kv, kv, h.wq, h.wk, h.wv, block.attention_scale(), nullptr);
  auto projected = matmul(tape, transpose(tape, block.output_projection()), single);
  CHECK((multi->mat() - projected->mat()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical heads concatenate to repeated channel blocks") {
  Rng rng(5);
  MaxFormerBlock block(8, 2, 16, true, rng);
  ParamList params;
  block.append_params("b", params);
  auto pm = param_map(params);
  pm.at("b.head1.wq")->values() = pm.at("b.head0.wq")->values();
  pm.at("b.head1.wk")->values() = pm.at("b.head0.wk")->values();
  pm.at("b.head1.wv")->values() = pm.at("b.head0.wv")->values();

  auto q = random_tensor({8, 3}, rng, false);
  auto kv = random_tensor({8, 5}, rng, false);
  Tape tape;
  const auto& h0 = block.heads()[0];
  auto one =
      single_head_transfer(tape, q, kv, kv, h0.wq, h0.wk, h0.wv, block.attention_scale(), nullptr);
  auto cat = concat_rows(tape, {one, one});
  auto expect = matmul(tape, transpose(tape, block.output_projection()), cat);
  auto multi = block.transfer(tape, q, kv);
  CHECK((multi->mat() - expect->mat()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("multi-head transfer matches the per-head loop oracle") {
  Rng rng(6);
  MaxFormerBlock block(16, 4, 32, true, rng);
  auto q = random_tensor({16, 5}, rng, false, -1.0, 1.0);
  auto kv = random_tensor({16, 9}, rng, false, -1.0, 1.0);
  Tape tape;
  auto out = block.transfer(tape, q, kv);
  const Matrix expect = multi_head_transfer_oracle(q->mat(), kv->mat(), block);
  CHECK((out->mat() - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mfm pre-G stage dominates both branches and rejects mismatched shapes") {
  Rng rng(7);
  MaxFormerBlock block(6, 2, 12, true, rng);
  ParamList params;
  block.append_params("b", params);
  auto pm = param_map(params);

  auto target = random_tensor({6, 4}, rng, false);
  auto transferred = random_tensor({6, 4}, rng, false);
  Tape tape;
  auto pre = block.fuse_pre(tape, target, transferred);
  auto branch =
      add_bias_cols(tape, matmul(tape, pm.at("b.f_theta1.w"), target), pm.at("b.f_theta1.b"));
  CHECK((pre->values() >= branch->values()).all());
  CHECK((pre->values() >= transferred->values()).all());

  auto bad = random_tensor({6, 5}, rng, false);
  CHECK_THROWS_AS(block.fuse_pre(tape, target, bad), std::invalid_argument);
}

TEST_CASE("mfm returns the dominant branch exactly") {
  Rng rng(8);
  MaxFormerBlock block(4, 2, 8, true, rng);
  ParamList params;
  block.append_params("b", params);
  auto pm = param_map(params);
  pm.at("b.f_theta1.w")->values().setZero();
  pm.at("b.f_theta1.b")->values().setZero();

  auto target = random_tensor({4, 3}, rng, false);
  auto transferred = random_tensor({4, 3}, rng, false, 0.5, 2.0);  // above the zero branch
  Tape tape;
  auto pre = block.fuse_pre(tape, target, transferred);
  CHECK((pre->values() - transferred->values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("mfm exact tie routes gradient to the target branch only") {
  Rng rng(9);
  MaxFormerBlock block(4, 2, 8, true, rng);
  ParamList params;
  block.append_params("b", params);
  auto pm = param_map(params);
  // identity F_theta1 so the branch equals the target stream itself
  pm.at("b.f_theta1.w")->values().setZero();
  for (Index i = 0; i < 4; ++i) pm.at("b.f_theta1.w")->values()(i * 4 + i) = 1.0;
  pm.at("b.f_theta1.b")->values().setZero();

  Rng rng2(10);
  const Matrix same = random_matrix(4, 3, rng2);
  auto target = tensor_from(same, true);
  auto transferred = tensor_from(same, true);
  Tape tape;
  auto pre = block.fuse_pre(tape, target, transferred);
  backward(tape, sum_all(tape, pre));
  CHECK(target->grad().minCoeff() == 1.0);  // identity affine passes dL straight through
  CHECK(transferred->grad().abs().maxCoeff() == 0.0);
}

TEST_CASE("booster output length always equals the target length") {
  Rng rng(11);
  CrossModalBooster booster(5, 3, 8, 2, 2, 16, true, rng);
  for (Index t_s : {1, 2, 3, 7, 20}) {
    for (Index t_t : {1, 4, 5}) {
      auto src = random_tensor({5, t_s}, rng, false);
      auto tgt = random_tensor({3, t_t}, rng, false);
      Tape tape;
      tape.set_enabled(false);
      auto out = booster.forward(tape, src, tgt);
      CHECK(out->rows() == 8);
      CHECK(out->cols() == t_t);
    }
  }
}

TEST_CASE("booster at full scale maps (200, 50) to 128 x 50") {
  Rng rng(12);
  CrossModalBooster booster(64, 64, 128, 4, 3, 256, true, rng);
  auto src = random_tensor({64, 200}, rng, false, -1.0, 1.0);
  auto tgt = random_tensor({64, 50}, rng, false, -1.0, 1.0);
  Tape tape;
  tape.set_enabled(false);
  auto out = booster.forward(tape, src, tgt);
  CHECK(out->rows() == 128);
  CHECK(out->cols() == 50);
  CHECK(out->values().isFinite().all());
}

TEST_CASE("attention rows sum to one in every head of every block") {
  Rng rng(13);
  CrossModalBooster booster(5, 4, 8, 2, 3, 16, true, rng);
  auto src = random_tensor({5, 11}, rng, false);
  auto tgt = random_tensor({4, 6}, rng, false);
  Tape tape;
  std::vector<AttentionProbe> probes;
  booster.forward(tape, src, tgt, &probes);
  CHECK(probes.size() == 3);
  for (const auto& probe : probes) {
    CHECK(probe.head_attention.size() == 2);
    for (const auto& attn : probe.head_attention) {
      CHECK(attn->rows() == 6);
      CHECK(attn->cols() == 11);
      for (Index r = 0; r < attn->rows(); ++r)
        CHECK(std::abs(attn->mat().row(r).sum() - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("uniform attention output is invariant to source frame permutation") {
  Rng rng(14);
  CrossModalBooster booster(5, 4, 8, 2, 2, 16, true, rng);
  ParamList params;
  booster.append_params("bst", params);
  for (auto& p : params)
    if (p.name.find(".wq") != std::string::npos) p.tensor->values().setZero();

  Rng data_rng(15);
  const Matrix src = random_matrix(5, 9, data_rng);
  Matrix permuted = src;
  permuted.col(1).swap(permuted.col(7));
  permuted.col(0).swap(permuted.col(4));
  auto tgt = random_tensor({4, 6}, data_rng, false);

  Tape tape;
  tape.set_enabled(false);
  auto out1 = booster.forward(tape, tensor_from(src), tgt);
  auto out2 = booster.forward(tape, tensor_from(permuted), tgt);
  CHECK((out1->values() - out2->values()).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("swapping booster roles swaps output shapes") {
  Rng rng(16);
  CrossModalBooster a_to_b(5, 3, 8, 2, 1, 16, true, rng);
  CrossModalBooster b_to_a(3, 5, 8, 2, 1, 16, true, rng);
  auto fa = random_tensor({5, 12}, rng, false);
  auto fb = random_tensor({3, 4}, rng, false);
  Tape tape;
  tape.set_enabled(false);
  CHECK(a_to_b.forward(tape, fa, fb)->cols() == 4);
  CHECK(b_to_a.forward(tape, fb, fa)->cols() == 12);
}

TEST_CASE("booster gradients agree with finite differences") {
  Rng rng(17);
  CrossModalBooster booster(3, 4, 8, 2, 1, 8, true, rng);
  auto src = random_tensor({3, 5}, rng, true, -1.0, 1.0);
  auto tgt = random_tensor({4, 3}, rng, true, -1.0, 1.0);
  ParamList params;
  booster.append_params("bst", params);
  std::vector<TensorPtr> inputs = {src, tgt};
  for (auto& p : params) inputs.push_back(p.tensor);
  CHECK(fd_max_rel_err([&](Tape& t) { return booster.forward(t, src, tgt); }, inputs, 1701) <
        1e-4);
}

TEST_CASE("degenerate single-frame source is handled by every block") {
  Rng rng(18);
  CrossModalBooster booster(5, 4, 8, 2, 3, 16, true, rng);
  auto src = random_tensor({5, 1}, rng, false);
  auto tgt = random_tensor({4, 6}, rng, false);
  Tape tape;
  tape.set_enabled(false);
  auto out = booster.forward(tape, src, tgt);
  CHECK(out->cols() == 6);
  CHECK(out->values().isFinite().all());
}

TEST_CASE("scale switch selects sqrt(d) or sqrt(d_h)") {
  Rng rng(19);
  MaxFormerBlock by_d(8, 2, 16, true, rng);
  MaxFormerBlock by_dh(8, 2, 16, false, rng);
  CHECK(by_d.attention_scale() == doctest::Approx(1.0 / std::sqrt(8.0)).epsilon(1e-15));
  CHECK(by_dh.attention_scale() == doctest::Approx(1.0 / std::sqrt(4.0)).epsilon(1e-15));
}

TEST_CASE("model dim must divide by head count") {
  Rng rng(20);
  CHECK_THROWS_AS(MaxFormerBlock(10, 3, 20, true, rng), std::invalid_argument);
}
