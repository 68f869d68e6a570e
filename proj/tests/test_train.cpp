#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avlip/eval.hpp"
#include "avlip/train.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

namespace fs = std::filesystem;
using namespace avlip;

namespace {

struct TempCorpus {
  std::string dir = "train_test_corpus_tmp";
  TempCorpus() {
    fs::remove_all(dir);
    CorpusConfig cc;
    cc.train_speakers = 4;
    cc.train_utts_per_speaker = 4;
    cc.test_speakers = 3;
    cc.test_utts_per_speaker = 3;
    cc.t_v = 8;
    cc.n_target_trials = 6;
    cc.n_nontarget_trials = 20;
    generate_corpus(cc, 1234, dir);
  }
  ~TempCorpus() { fs::remove_all(dir); }
};

TrainConfig tiny_config(const std::string& mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model.c_a = 12;
  cfg.model.c_v = 12;
  cfg.model.d = 12;
  cfg.model.heads = 2;
  cfg.model.blocks = 1;
  cfg.model.embedding_dim = 12;
  cfg.model.asp_hidden = 6;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  return cfg;
}

Scalar batch_colearn_loss(const Trainer& trainer, const Corpus& corpus,
                          const std::vector<const CorpusIndexEntry*>& batch) {
  Scalar total = 0.0;
  for (const auto* e : batch) {
    Tape tape;
    tape.set_enabled(false);
    const BranchLosses l =
        trainer.colearn()->losses(tape, tensor_from(corpus.load_audio(e->utt_id)),
                                  tensor_from(corpus.load_visual(e->utt_id)),
                                  trainer.label_of(e->speaker_id));
    total += l.total->values()(0);
  }
  return total / static_cast<Scalar>(batch.size());
}

}  // namespace

TEST_CASE("multi-step schedule drops the rate at each milestone") {
  TrainConfig cfg;
  cfg.lr = 0.001;
  cfg.milestones = {10, 15};
  cfg.gamma = 0.1;
  for (int e = 1; e <= 10; ++e) CHECK(lr_at_epoch(cfg, e) == doctest::Approx(1e-3).epsilon(1e-12));
  for (int e = 11; e <= 15; ++e) CHECK(lr_at_epoch(cfg, e) == doctest::Approx(1e-4).epsilon(1e-12));
  for (int e = 16; e <= 40; ++e) CHECK(lr_at_epoch(cfg, e) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  Trainer trainer(tiny_config("co-learn-scratch", 5), corpus);
  std::vector<ArrayX> before;
  for (const auto& p : trainer.colearn()->params()) before.push_back(p.tensor->values());
  const auto train_split = corpus.split("train");
  trainer.train_step({train_split[0], train_split[1]}, 0.0);
  const auto params = trainer.colearn()->params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK((params[i].tensor->values() - before[i]).abs().maxCoeff() == 0.0);
}

TEST_CASE("fixed seed reproduces the loss sequence") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  const auto train_split = corpus.split("train");
  std::vector<const CorpusIndexEntry*> batch(train_split.begin(), train_split.begin() + 4);
  Trainer t1(tiny_config("co-learn-scratch", 9), corpus);
  Trainer t2(tiny_config("co-learn-scratch", 9), corpus);
  for (int step = 0; step < 2; ++step) {
    const StepLosses l1 = t1.train_step(batch, 1e-3);
    const StepLosses l2 = t2.train_step(batch, 1e-3);
    CHECK(l1.total == l2.total);
    CHECK(l1.a == l2.a);
    CHECK(l1.vt == l2.vt);
  }
}

TEST_CASE("one optimization step lowers the co-learning loss on most seeds") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  const auto train_split = corpus.split("train");
  std::vector<const CorpusIndexEntry*> batch(train_split.begin(), train_split.begin() + 8);
  int improved = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Trainer trainer(tiny_config("co-learn-scratch", seed), corpus);
    const Scalar before = batch_colearn_loss(trainer, corpus, batch);
    trainer.train_step(batch, 1e-3);
    const Scalar after = batch_colearn_loss(trainer, corpus, batch);
    if (after < before) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("empty batches are rejected") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  Trainer trainer(tiny_config("baseline-audio", 3), corpus);
  CHECK_THROWS_AS(trainer.train_step({}, 1e-3), std::invalid_argument);
}

TEST_CASE("adam with zero gradients applies the closed-form coupled decay") {
  TrainConfig cfg;
  cfg.weight_decay = 1e-2;
  auto theta = make_tensor({4}, true);
  theta->values() << 1.0, -2.0, 0.5, 3.0;
  const ArrayX before = theta->values();
  Adam adam({{"theta", theta}}, cfg);
  adam.zero_grad();
  adam.step(1e-3);
  for (Index i = 0; i < 4; ++i) {
    const Scalar g = cfg.weight_decay * before(i);  // m_hat = g, v_hat = g^2
    const Scalar expect = before(i) - 1e-3 * g / (std::abs(g) + cfg.adam_eps);
    CHECK(theta->values()(i) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("zero epochs leave the checkpoint at initialization") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  TrainConfig cfg = tiny_config("baseline-audio", 11);
  cfg.epochs = 0;
  Trainer trainer(cfg, corpus);
  std::vector<ArrayX> init;
  for (const auto& p : trainer.baseline()->params()) init.push_back(p.tensor->values());
  std::ostringstream log;
  trainer.run(&log);
  CHECK(log.str().empty());
  const Checkpoint ckpt = trainer.make_checkpoint();
  CHECK(ckpt.epoch == 0);
  const auto params = trainer.baseline()->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray* arr = ckpt.find(params[i].name);
    REQUIRE(arr != nullptr);
    CHECK((arr->data - init[i]).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly through disk") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  TrainConfig cfg = tiny_config("co-learn-scratch", 13);
  cfg.epochs = 1;
  Trainer trainer(cfg, corpus);
  std::ostringstream log;
  trainer.run(&log);
  const Checkpoint before = trainer.make_checkpoint();
  save_checkpoint("train_ckpt_tmp.bin", before);
  const Checkpoint after = load_checkpoint("train_ckpt_tmp.bin");
  CHECK(after.epoch == before.epoch);
  CHECK(after.adam_step == before.adam_step);
  CHECK(after.snapshot.serialize() == before.snapshot.serialize());
  REQUIRE(after.arrays.size() == before.arrays.size());
  for (std::size_t i = 0; i < before.arrays.size(); ++i) {
    CHECK(after.arrays[i].first == before.arrays[i].first);
    CHECK((after.arrays[i].second.data - before.arrays[i].second.data).abs().maxCoeff() == 0.0);
  }
  fs::remove("train_ckpt_tmp.bin");
}

TEST_CASE("restore reproduces a saved trainer state") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  TrainConfig cfg = tiny_config("baseline-visual", 17);
  cfg.epochs = 1;
  Trainer a(cfg, corpus);
  std::ostringstream log;
  a.run(&log);
  const Checkpoint ckpt = a.make_checkpoint();

  Trainer b(cfg, corpus);
  b.restore(ckpt);
  const auto pa = a.baseline()->params();
  const auto pb = b.baseline()->params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i].tensor->values() - pb[i].tensor->values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("booster gradients vanish when only unimodal losses are used") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  Trainer trainer(tiny_config("co-learn-scratch", 19), corpus);
  const auto* entry = corpus.split("train")[0];
  Tape tape;
  const BranchLosses l = trainer.colearn()->losses(
      tape, tensor_from(corpus.load_audio(entry->utt_id)),
      tensor_from(corpus.load_visual(entry->utt_id)), trainer.label_of(entry->speaker_id));
  for (auto& p : trainer.colearn()->params()) p.tensor->zero_grad();
  backward(tape, add(tape, l.a, l.v));
  for (auto& p : trainer.colearn()->params()) {
    if (p.name.rfind("audio_booster", 0) == 0 || p.name.rfind("visual_booster", 0) == 0)
      CHECK(p.tensor->grad().abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("baseline checkpoints exclude booster tensors") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  Trainer trainer(tiny_config("baseline-audio", 23), corpus);
  const Checkpoint ckpt = trainer.make_checkpoint();
  for (const auto& [name, arr] : ckpt.arrays) CHECK(name.find("booster") == std::string::npos);
}

TEST_CASE("warm start copies baseline tensors bit-exactly and can freeze them") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);

  TrainConfig audio_cfg = tiny_config("baseline-audio", 29);
  audio_cfg.epochs = 1;
  Trainer audio(audio_cfg, corpus);
  std::ostringstream log;
  audio.run(&log);
  const Checkpoint audio_ckpt = audio.make_checkpoint();

  TrainConfig visual_cfg = tiny_config("baseline-visual", 31);
  visual_cfg.epochs = 1;
  Trainer visual(visual_cfg, corpus);
  visual.run(&log);
  const Checkpoint visual_ckpt = visual.make_checkpoint();

  save_checkpoint("warm_a_tmp.bin", audio_ckpt);
  save_checkpoint("warm_v_tmp.bin", visual_ckpt);

  TrainConfig warm_cfg = tiny_config("co-learn-warm", 37);
  warm_cfg.warm_audio_checkpoint = "warm_a_tmp.bin";
  warm_cfg.warm_visual_checkpoint = "warm_v_tmp.bin";
  Trainer warm(warm_cfg, corpus);

  for (const auto& p : warm.colearn()->params()) {
    const Checkpoint* src = nullptr;
    std::string src_name;
    for (const auto& [dst, from, ckpt] :
         std::vector<std::tuple<std::string, std::string, const Checkpoint*>>{
             {"audio_enc.", "enc.", &audio_ckpt},
             {"dec_a.", "dec.", &audio_ckpt},
             {"head_a.", "head.", &audio_ckpt},
             {"visual_enc.", "enc.", &visual_ckpt},
             {"dec_v.", "dec.", &visual_ckpt},
             {"head_v.", "head.", &visual_ckpt}}) {
      if (p.name.rfind(dst, 0) == 0) {
        src = ckpt;
        src_name = from + p.name.substr(dst.size());
        break;
      }
    }
    if (!src) continue;
    const NamedArray* arr = src->find(src_name);
    REQUIRE(arr != nullptr);
    CHECK((p.tensor->values() - arr->data).abs().maxCoeff() == 0.0);
  }

  // freezing marks exactly the copied tensors
  warm_cfg.freeze_pretrained = true;
  Trainer frozen(warm_cfg, corpus);
  for (const auto& p : frozen.colearn()->params()) {
    const bool copied = p.name.rfind("audio_enc.", 0) == 0 || p.name.rfind("dec_a.", 0) == 0 ||
                        p.name.rfind("head_a.", 0) == 0 ||
                        p.name.rfind("visual_enc.", 0) == 0 ||
                        p.name.rfind("dec_v.", 0) == 0 || p.name.rfind("head_v.", 0) == 0;
    CHECK(p.tensor->requires_grad() == !copied);
  }

  // warm start without checkpoints is an actionable config error
  TrainConfig missing = tiny_config("co-learn-warm", 39);
  CHECK_THROWS_AS(Trainer(missing, corpus), std::invalid_argument);

  fs::remove("warm_a_tmp.bin");
  fs::remove("warm_v_tmp.bin");
}

TEST_CASE("warm start reaches a lower loss than from-scratch at epoch three") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  int warm_wins = 0;
  for (std::uint64_t seed : {61, 62, 63}) {
    TrainConfig base_cfg = tiny_config("baseline-audio", seed);
    base_cfg.epochs = 2;
    Trainer audio(base_cfg, corpus);
    std::ostringstream sink;
    audio.run(&sink);
    save_checkpoint("warm_cmp_a_tmp.bin", audio.make_checkpoint());
    base_cfg.mode = "baseline-visual";
    Trainer visual(base_cfg, corpus);
    visual.run(&sink);
    save_checkpoint("warm_cmp_v_tmp.bin", visual.make_checkpoint());

    auto epoch3_loss = [&](const std::string& mode) {
      TrainConfig cfg = tiny_config(mode, seed);
      cfg.epochs = 3;
      if (mode == "co-learn-warm") {
        cfg.warm_audio_checkpoint = "warm_cmp_a_tmp.bin";
        cfg.warm_visual_checkpoint = "warm_cmp_v_tmp.bin";
      }
      Trainer trainer(cfg, corpus);
      std::ostringstream log;
      trainer.run(&log);
      std::istringstream in(log.str());
      Scalar total = 0.0, lr, a, v, at, vt;
      int epoch;
      while (in >> epoch >> lr >> a >> v >> at >> vt >> total) {
      }
      return total;  // epoch-3 mean co-learning loss
    };
    if (epoch3_loss("co-learn-warm") < epoch3_loss("co-learn-scratch")) ++warm_wins;
  }
  CHECK(warm_wins >= 2);
  fs::remove("warm_cmp_a_tmp.bin");
  fs::remove("warm_cmp_v_tmp.bin");
}

TEST_CASE("visual baseline evaluation ignores the audio files entirely") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  TrainConfig cfg = tiny_config("baseline-visual", 41);
  cfg.epochs = 1;
  Trainer trainer(cfg, corpus);
  std::ostringstream log;
  trainer.run(&log);
  const Checkpoint ckpt = trainer.make_checkpoint();
  const LoadedModel model = build_model_from_checkpoint(ckpt);
  const auto trials = corpus.load_trials();
  const ScoreReport before = evaluate_trials(model, corpus, trials);

  // corrupt every audio file, visual scores must not move
  for (const auto& e : corpus.entries()) {
    Matrix junk = Matrix::Constant(80, 4, 1e6);
    write_matrix_file((fs::path(tc.dir) / e.audio_path).string(), junk);
  }
  const ScoreReport after = evaluate_trials(model, corpus, trials);
  REQUIRE(before.trials.size() == after.trials.size());
  for (std::size_t i = 0; i < before.trials.size(); ++i)
    CHECK(before.trials[i].branch_scores[0] == after.trials[i].branch_scores[0]);
}

TEST_CASE("training curve decreases on a tiny run") {
  TempCorpus tc;
  const Corpus corpus(tc.dir);
  TrainConfig cfg = tiny_config("co-learn-scratch", 43);
  cfg.epochs = 3;
  Trainer trainer(cfg, corpus);
  std::ostringstream log;
  trainer.run(&log);
  std::istringstream in(log.str());
  Scalar first_total = 0.0, last_total = 0.0;
  int epoch;
  Scalar lr, a, v, at, vt, total;
  int row = 0;
  while (in >> epoch >> lr >> a >> v >> at >> vt >> total) {
    if (row == 0) first_total = total;
    last_total = total;
    ++row;
  }
  CHECK(row == 3);
  CHECK(last_total < first_total);
}

TEST_CASE("baseline audio beats chance on a clean toy corpus") {
  const std::string dir = "train_test_clean_corpus_tmp";
  fs::remove_all(dir);
  CorpusConfig cc;
  cc.train_speakers = 4;
  cc.train_utts_per_speaker = 4;
  cc.test_speakers = 3;
  cc.test_utts_per_speaker = 3;
  cc.t_v = 8;
  cc.sigma_a = 0.05;  // clean condition
  cc.sigma_v = 0.1;
  cc.n_target_trials = 6;
  cc.n_nontarget_trials = 20;
  generate_corpus(cc, 1234, dir);
  const Corpus corpus(dir);
  TrainConfig cfg = tiny_config("baseline-audio", 47);
  cfg.epochs = 3;
  Trainer trainer(cfg, corpus);
  std::ostringstream log;
  trainer.run(&log);
  const LoadedModel model = build_model_from_checkpoint(trainer.make_checkpoint());
  const ScoreReport report = evaluate_trials(model, corpus, corpus.load_trials());
  CHECK(report.summaries.at("audio").eer < 0.5);
  fs::remove_all(dir);
}

TEST_CASE("grad_check flags a corrupted backward rule by tensor name") {
  auto w = make_tensor({3}, true);
  w->values() << 0.3, -1.2, 0.8;

  // deliberately wrong rule: forward doubles, backward claims identity
  auto buggy_forward = [&](Tape& tape) {
    auto out = make_tensor({3}, true);
    out->values() = 2.0 * w->values();
    tape.record([w2 = w, out] { w2->grad() += out->grad(); });
    return out;
  };
  auto loss_value = [&]() {
    Tape t;
    t.set_enabled(false);
    return 2.0 * w->values().sum();
  };
  auto accumulate = [&]() {
    w->zero_grad();
    Tape tape;
    auto out = buggy_forward(tape);
    backward(tape, sum_all(tape, out));
  };
  const GradCheckReport report = grad_check({{"w", w}}, loss_value, accumulate);
  REQUIRE(report.worst() != nullptr);
  CHECK(report.worst()->name == "w");
  CHECK(report.worst()->max_rel_err > 0.1);
}

TEST_CASE("repeated micro gradchecks are identical") {
  const GradCheckReport a = run_micro_gradcheck(42);
  const GradCheckReport b = run_micro_gradcheck(42);
  REQUIRE(a.per_tensor.size() == b.per_tensor.size());
  for (std::size_t i = 0; i < a.per_tensor.size(); ++i)
    CHECK(a.per_tensor[i].max_rel_err == b.per_tensor[i].max_rel_err);
  CHECK(a.max_rel_err < 1e-4);
}

TEST_CASE("config parsing: sections, types, lists, errors") {
  const Config c = Config::from_string(
      "# comment\n"
      "top = 1\n"
      "[train]\n"
      "lr = 0.01\n"
      "milestones = 3, 5, 9\n"
      "mode = baseline-audio\n"
      "flag = true\n");
  CHECK(c.get_int("top", 0) == 1);
  CHECK(c.get_double("train.lr", 0.0) == 0.01);
  CHECK(c.get_int_list("train.milestones", {}) == std::vector<std::int64_t>{3, 5, 9});
  CHECK(c.get_string("train.mode", "") == "baseline-audio");
  CHECK(c.get_bool("train.flag", false));
  CHECK(c.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(Config::from_string("no equals sign"), std::runtime_error);
  CHECK_THROWS_AS(c.get_int("train.mode", 0), std::runtime_error);
}

TEST_CASE("snapshot and model config round-trip") {
  TrainConfig cfg = tiny_config("co-learn-scratch", 53);
  cfg.model.n_classes = 9;
  const Config snap = train_config_snapshot(cfg);
  const Config reparsed = Config::from_string(snap.serialize());
  const ModelConfig mc = model_config_from_snapshot(reparsed);
  CHECK(mc.c_a == cfg.model.c_a);
  CHECK(mc.d == cfg.model.d);
  CHECK(mc.heads == cfg.model.heads);
  CHECK(mc.n_classes == 9);
  CHECK(mc.aam_margin == cfg.model.aam_margin);
  CHECK(reparsed.get_string("train.mode", "") == "co-learn-scratch");
}
