#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace avlip {

using Scalar = double;
using Index = Eigen::Index;

// Row-major throughout: flat buffers match the on-disk matrix format and
// make kernel-slice strides in conv weights straightforward.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense value/gradient pair, the unit of all learnable and intermediate
/// state. Rank 1 is a column vector, rank 2 a matrix (channels x frames for
/// feature sequences), rank 3 is reserved for conv kernels (out x in x k).
class Tensor {
 public:
  Tensor(std::vector<Index> shape, bool requires_grad);

  const std::vector<Index>& shape() const { return shape_; }
  Index size() const { return values_.size(); }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg) { requires_grad_ = rg; }

  ArrayX& values() { return values_; }
  const ArrayX& values() const { return values_; }
  ArrayX& grad() { return grad_; }
  const ArrayX& grad() const { return grad_; }

  /// 2-D view of the flat buffer (rank 3 collapses trailing extents).
  MatrixMap mat() { return MatrixMap(values_.data(), rows_, cols_); }
  ConstMatrixMap mat() const { return ConstMatrixMap(values_.data(), rows_, cols_); }
  MatrixMap grad_mat() { return MatrixMap(grad_.data(), rows_, cols_); }
  ConstMatrixMap grad_mat() const { return ConstMatrixMap(grad_.data(), rows_, cols_); }

  void zero_grad() { grad_.setZero(); }

  std::string shape_str() const;

 private:
  std::vector<Index> shape_;
  Index rows_ = 0;
  Index cols_ = 0;
  ArrayX values_;
  ArrayX grad_;
  bool requires_grad_ = false;
};

TensorPtr make_tensor(std::vector<Index> shape, bool requires_grad = false);
TensorPtr tensor_from(const Matrix& m, bool requires_grad = false);
TensorPtr make_scalar(Scalar v, bool requires_grad = false);

/// Records one backward rule per primitive as the forward pass executes.
/// Replaying the rules in reverse order accumulates gradients into every
/// requires_grad tensor reachable from the loss. One tape per forward pass,
/// cleared afterwards; single-threaded by contract.
class Tape {
 public:
  void record(std::function<void()> rule) {
    if (enabled_) rules_.push_back(std::move(rule));
  }
  void clear() { rules_.clear(); }
  std::size_t size() const { return rules_.size(); }

  bool enabled() const { return enabled_; }
  /// Disabled tapes drop rules; used for inference-only forwards.
  void set_enabled(bool e) { enabled_ = e; }

  void replay_reverse() {
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> rules_;
  bool enabled_ = true;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape. Loss must be scalar.
void backward(Tape& tape, const TensorPtr& loss);

// ---- primitive operations -------------------------------------------------
// Each op computes its value eagerly with Eigen and records the closed-form
// backward rule on the tape. Output requires_grad is the OR of the inputs'.

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(Tape& tape, const TensorPtr& a);
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& a, Scalar c);

/// x: C x T, bias: length-C vector added to every column.
TensorPtr add_bias_cols(Tape& tape, const TensorPtr& x, const TensorPtr& bias);

TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr tanh_op(Tape& tape, const TensorPtr& x);

/// Elementwise max; on exact ties the gradient goes to `a` (the target
/// branch in MFM fusion).
TensorPtr emax(Tape& tape, const TensorPtr& a, const TensorPtr& b);

/// Row-wise softmax, stabilized by subtracting each row's maximum.
TensorPtr softmax_rows(Tape& tape, const TensorPtr& x);

/// Normalizes each column of x over the channel (row) axis to zero mean and
/// unit variance (biased, +eps under the sqrt), then applies per-channel
/// gain and bias. The single-vector layer_norm case is C x 1.
TensorPtr layer_norm_cols(Tape& tape, const TensorPtr& x, const TensorPtr& gain,
                          const TensorPtr& bias, Scalar eps = 1e-5);

/// Same-length 1-D convolution over frames. x: C_in x T, w: {C_out, C_in, K}
/// with K odd, b: length C_out. Symmetric zero padding dilation*(K-1)/2.
TensorPtr conv1d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b, Index dilation = 1);

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts);

/// C x T -> C x 1 sum over frames.
TensorPtr row_sum(Tape& tape, const TensorPtr& x);

TensorPtr sum_all(Tape& tape, const TensorPtr& x);

/// sqrt(max(x, floor)); gradient is zero in the clamped region.
TensorPtr sqrt_floor(Tape& tape, const TensorPtr& x, Scalar floor_val);

/// Columns scaled to unit L2 norm; zero-norm columns are rejected.
TensorPtr l2_normalize_cols(Tape& tape, const TensorPtr& x);
TensorPtr l2_normalize_rows(Tape& tape, const TensorPtr& x);

}  // namespace avlip
