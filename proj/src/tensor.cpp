#include "avlip/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace avlip {

namespace {

Index product(const std::vector<Index>& shape) {
  Index p = 1;
  for (Index d : shape) p *= d;
  return p;
}

bool any_grad(std::initializer_list<const TensorPtr*> ts) {
  for (const TensorPtr* t : ts)
    if ((*t)->requires_grad()) return true;
  return false;
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

void check_same_2d(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

}  // namespace

Tensor::Tensor(std::vector<Index> shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  if (shape_.empty()) throw std::invalid_argument("Tensor: empty shape");
  for (Index d : shape_)
    if (d <= 0) throw std::invalid_argument("Tensor: nonpositive extent in " + shape_str());
  rows_ = shape_[0];
  cols_ = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) cols_ *= shape_[i];
  values_.setZero(rows_ * cols_);
  grad_.setZero(rows_ * cols_);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

TensorPtr make_tensor(std::vector<Index> shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr tensor_from(const Matrix& m, bool requires_grad) {
  auto t = make_tensor({m.rows(), m.cols()}, requires_grad);
  t->mat() = m;
  return t;
}

TensorPtr make_scalar(Scalar v, bool requires_grad) {
  auto t = make_tensor({1, 1}, requires_grad);
  t->values()(0) = v;
  return t;
}

void backward(Tape& tape, const TensorPtr& loss) {
  if (loss->size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + loss->shape_str());
  loss->grad()(0) += 1.0;
  tape.replay_reverse();
}

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->cols() != b->rows()) shape_error("matmul", *a, *b);
  auto out = make_tensor({a->rows(), b->cols()}, any_grad({&a, &b}));
  out->mat().noalias() = a->mat() * b->mat();
  if (out->requires_grad())
    tape.record([a, b, out] {
      if (a->requires_grad()) a->grad_mat().noalias() += out->grad_mat() * b->mat().transpose();
      if (b->requires_grad()) b->grad_mat().noalias() += a->mat().transpose() * out->grad_mat();
    });
  return out;
}

TensorPtr transpose(Tape& tape, const TensorPtr& a) {
  auto out = make_tensor({a->cols(), a->rows()}, a->requires_grad());
  out->mat() = a->mat().transpose();
  if (out->requires_grad())
    tape.record([a, out] { a->grad_mat() += out->grad_mat().transpose(); });
  return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_2d("add", *a, *b);
  auto out = make_tensor({a->rows(), a->cols()}, any_grad({&a, &b}));
  out->values() = a->values() + b->values();
  if (out->requires_grad())
    tape.record([a, b, out] {
      if (a->requires_grad()) a->grad() += out->grad();
      if (b->requires_grad()) b->grad() += out->grad();
    });
  return out;
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_2d("sub", *a, *b);
  auto out = make_tensor({a->rows(), a->cols()}, any_grad({&a, &b}));
  out->values() = a->values() - b->values();
  if (out->requires_grad())
    tape.record([a, b, out] {
      if (a->requires_grad()) a->grad() += out->grad();
      if (b->requires_grad()) b->grad() -= out->grad();
    });
  return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_2d("mul", *a, *b);
  auto out = make_tensor({a->rows(), a->cols()}, any_grad({&a, &b}));
  out->values() = a->values() * b->values();
  if (out->requires_grad())
    tape.record([a, b, out] {
      if (a->requires_grad()) a->grad() += out->grad() * b->values();
      if (b->requires_grad()) b->grad() += out->grad() * a->values();
    });
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& a, Scalar c) {
  auto out = make_tensor({a->rows(), a->cols()}, a->requires_grad());
  out->values() = c * a->values();
  if (out->requires_grad())
    tape.record([a, out, c] { a->grad() += c * out->grad(); });
  return out;
}

TensorPtr add_bias_cols(Tape& tape, const TensorPtr& x, const TensorPtr& bias) {
  if (bias->cols() != 1 || bias->rows() != x->rows()) shape_error("add_bias_cols", *x, *bias);
  auto out = make_tensor({x->rows(), x->cols()}, any_grad({&x, &bias}));
  out->mat() = x->mat().colwise() + Eigen::Map<const Vector>(bias->values().data(), bias->rows());
  if (out->requires_grad())
    tape.record([x, bias, out] {
      if (x->requires_grad()) x->grad() += out->grad();
      if (bias->requires_grad())
        Eigen::Map<Vector>(bias->grad().data(), bias->rows()) += out->grad_mat().rowwise().sum();
    });
  return out;
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({x->rows(), x->cols()}, x->requires_grad());
  out->values() = x->values().max(0.0);
  if (out->requires_grad())
    tape.record([x, out] {
      x->grad() += out->grad() * (x->values() > 0.0).cast<Scalar>();
    });
  return out;
}

TensorPtr tanh_op(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({x->rows(), x->cols()}, x->requires_grad());
  out->values() = x->values().tanh();
  if (out->requires_grad())
    tape.record([x, out] {
      x->grad() += out->grad() * (1.0 - out->values().square());
    });
  return out;
}

TensorPtr emax(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_2d("emax", *a, *b);
  auto out = make_tensor({a->rows(), a->cols()}, any_grad({&a, &b}));
  // ties route to a
  ArrayX mask = (a->values() >= b->values()).cast<Scalar>();
  out->values() = mask * a->values() + (1.0 - mask) * b->values();
  if (out->requires_grad())
    tape.record([a, b, out, mask] {
      if (a->requires_grad()) a->grad() += out->grad() * mask;
      if (b->requires_grad()) b->grad() += out->grad() * (1.0 - mask);
    });
  return out;
}

TensorPtr softmax_rows(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({x->rows(), x->cols()}, x->requires_grad());
  Matrix shifted = x->mat().colwise() - x->mat().rowwise().maxCoeff();
  Matrix e = shifted.array().exp().matrix();
  out->mat() = e.array().colwise() / e.rowwise().sum().array();
  if (out->requires_grad())
    tape.record([x, out] {
      const auto y = out->mat();
      const auto dy = out->grad_mat();
      Vector s = (dy.array() * y.array()).rowwise().sum();
      x->grad_mat() += (y.array() * (dy.colwise() - s).array()).matrix();
    });
  return out;
}

TensorPtr layer_norm_cols(Tape& tape, const TensorPtr& x, const TensorPtr& gain,
                          const TensorPtr& bias, Scalar eps) {
  const Index c = x->rows();
  if (gain->rows() != c || gain->cols() != 1) shape_error("layer_norm_cols", *x, *gain);
  if (bias->rows() != c || bias->cols() != 1) shape_error("layer_norm_cols", *x, *bias);
  auto out = make_tensor({c, x->cols()}, any_grad({&x, &gain, &bias}));

  Eigen::RowVectorXd mean = x->mat().colwise().mean();
  Matrix centered = x->mat().rowwise() - mean;
  Eigen::RowVectorXd stddev =
      ((centered.array().square().colwise().sum() / static_cast<Scalar>(c)) + eps).sqrt();
  Matrix xhat = centered.array().rowwise() / stddev.array();
  const Vector g = Eigen::Map<const Vector>(gain->values().data(), c);
  const Vector bvec = Eigen::Map<const Vector>(bias->values().data(), c);
  out->mat() = ((xhat.array().colwise() * g.array()).colwise() + bvec.array()).matrix();

  if (out->requires_grad())
    tape.record([x, gain, bias, out, xhat, stddev, c] {
      const auto dy = out->grad_mat();
      if (gain->requires_grad())
        Eigen::Map<Vector>(gain->grad().data(), c) +=
            (dy.array() * xhat.array()).rowwise().sum().matrix();
      if (bias->requires_grad())
        Eigen::Map<Vector>(bias->grad().data(), c) += dy.rowwise().sum();
      if (x->requires_grad()) {
        const Vector g = Eigen::Map<const Vector>(gain->values().data(), c);
        Matrix dxhat = dy.array().colwise() * g.array();
        Eigen::RowVectorXd m1 = dxhat.colwise().mean();
        Eigen::RowVectorXd m2 = (dxhat.array() * xhat.array()).colwise().mean();
        Matrix dx = ((dxhat.rowwise() - m1).array() - xhat.array().rowwise() * m2.array())
                        .rowwise() /
                    stddev.array();
        x->grad_mat() += dx;
      }
    });
  return out;
}

TensorPtr conv1d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b, Index dilation) {
  if (w->shape().size() != 3)
    throw std::invalid_argument("conv1d: weight must be rank 3, got " + w->shape_str());
  const Index c_out = w->shape()[0], c_in = w->shape()[1], k = w->shape()[2];
  if (k % 2 == 0)
    throw std::invalid_argument("conv1d: even kernel size " + std::to_string(k) +
                                " breaks the same-length contract");
  if (x->rows() != c_in) shape_error("conv1d", *x, *w);
  if (b->rows() != c_out || b->cols() != 1) shape_error("conv1d: bias", *w, *b);
  if (dilation < 1) throw std::invalid_argument("conv1d: dilation must be >= 1");

  const Index t = x->cols();
  const Index pad = dilation * (k - 1) / 2;
  auto out = make_tensor({c_out, t}, any_grad({&x, &w, &b}));

  using StrideT = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  using KSliceConst = Eigen::Map<const Matrix, 0, StrideT>;
  const StrideT stride(c_in * k, k);

  out->mat().colwise() = Eigen::Map<const Vector>(b->values().data(), c_out);
  for (Index kk = 0; kk < k; ++kk) {
    const Index off = dilation * kk - pad;
    const Index t0 = std::max<Index>(0, -off);
    const Index t1 = std::min<Index>(t, t - off);
    if (t1 <= t0) continue;
    KSliceConst wk(w->values().data() + kk, c_out, c_in, stride);
    out->mat().middleCols(t0, t1 - t0).noalias() += wk * x->mat().middleCols(t0 + off, t1 - t0);
  }

  if (out->requires_grad())
    tape.record([x, w, b, out, dilation, c_out, c_in, k, t, pad, stride] {
      using KSliceMut = Eigen::Map<Matrix, 0, StrideT>;
      const auto dy = out->grad_mat();
      if (b->requires_grad())
        Eigen::Map<Vector>(b->grad().data(), c_out) += dy.rowwise().sum();
      for (Index kk = 0; kk < k; ++kk) {
        const Index off = dilation * kk - pad;
        const Index t0 = std::max<Index>(0, -off);
        const Index t1 = std::min<Index>(t, t - off);
        if (t1 <= t0) continue;
        const Index len = t1 - t0;
        if (x->requires_grad()) {
          KSliceConst wk(w->values().data() + kk, c_out, c_in, stride);
          x->grad_mat().middleCols(t0 + off, len).noalias() +=
              wk.transpose() * dy.middleCols(t0, len);
        }
        if (w->requires_grad()) {
          KSliceMut dwk(w->grad().data() + kk, c_out, c_in, stride);
          dwk.noalias() += dy.middleCols(t0, len) * x->mat().middleCols(t0 + off, len).transpose();
        }
      }
    });
  return out;
}

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts[0]->cols();
  Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->cols() != cols) shape_error("concat_rows", *parts[0], *p);
    rows += p->rows();
    rg = rg || p->requires_grad();
  }
  auto out = make_tensor({rows, cols}, rg);
  Index r = 0;
  for (const auto& p : parts) {
    out->mat().middleRows(r, p->rows()) = p->mat();
    r += p->rows();
  }
  if (rg)
    tape.record([parts, out] {
      Index r = 0;
      for (const auto& p : parts) {
        if (p->requires_grad()) p->grad_mat() += out->grad_mat().middleRows(r, p->rows());
        r += p->rows();
      }
    });
  return out;
}

TensorPtr row_sum(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({x->rows(), 1}, x->requires_grad());
  out->mat() = x->mat().rowwise().sum();
  if (out->requires_grad())
    tape.record([x, out] {
      x->grad_mat().colwise() += Eigen::Map<const Vector>(out->grad().data(), out->rows());
    });
  return out;
}

TensorPtr sum_all(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({1, 1}, x->requires_grad());
  out->values()(0) = x->values().sum();
  if (out->requires_grad())
    tape.record([x, out] { x->grad() += out->grad()(0); });
  return out;
}

TensorPtr sqrt_floor(Tape& tape, const TensorPtr& x, Scalar floor_val) {
  auto out = make_tensor({x->rows(), x->cols()}, x->requires_grad());
  out->values() = x->values().max(floor_val).sqrt();
  if (out->requires_grad())
    tape.record([x, out, floor_val] {
      x->grad() += out->grad() * (x->values() > floor_val).cast<Scalar>() /
                   (2.0 * out->values());
    });
  return out;
}

namespace {

TensorPtr l2_normalize_impl(Tape& tape, const TensorPtr& x, bool by_cols) {
  auto out = make_tensor({x->rows(), x->cols()}, x->requires_grad());
  const Index n = by_cols ? x->cols() : x->rows();
  Vector norms(n);
  for (Index i = 0; i < n; ++i)
    norms(i) = by_cols ? x->mat().col(i).norm() : x->mat().row(i).norm();
  if ((norms.array() == 0.0).any())
    throw std::invalid_argument("l2_normalize: zero-norm slice rejected");
  if (by_cols)
    out->mat() = x->mat().array().rowwise() / norms.transpose().array();
  else
    out->mat() = x->mat().array().colwise() / norms.array();
  if (out->requires_grad())
    tape.record([x, out, norms, by_cols, n] {
      for (Index i = 0; i < n; ++i) {
        if (by_cols) {
          const Vector y = out->mat().col(i);
          const Vector dy = out->grad_mat().col(i);
          x->grad_mat().col(i) += (dy - y * y.dot(dy)) / norms(i);
        } else {
          const Eigen::RowVectorXd y = out->mat().row(i);
          const Eigen::RowVectorXd dy = out->grad_mat().row(i);
          x->grad_mat().row(i) += (dy - y * y.dot(dy)) / norms(i);
        }
      }
    });
  return out;
}

}  // namespace

TensorPtr l2_normalize_cols(Tape& tape, const TensorPtr& x) {
  return l2_normalize_impl(tape, x, true);
}

TensorPtr l2_normalize_rows(Tape& tape, const TensorPtr& x) {
  return l2_normalize_impl(tape, x, false);
}

}  // namespace avlip
