#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "vitcat/errors.hpp"

namespace vitcat {

class GradTape;

// Dense row-major tensor of 64-bit reals (1-D or 2-D). Buffers are immutable
// once constructed: every op returns a fresh tensor, so tape closures can
// share buffers without copies. A tensor produced while recording carries a
// node id on its tape; plain tensors have node() == -1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape);
  Tensor(std::vector<size_t> shape, std::vector<double> data);
  Tensor(std::vector<size_t> shape, std::shared_ptr<const std::vector<double>> data);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);  // shape {1, n}
  static Tensor vec(std::vector<double> v);  // shape {n}

  const std::vector<size_t>& shape() const { return shape_; }
  size_t ndim() const { return shape_.size(); }
  size_t numel() const;
  size_t rows() const;  // 2-D only
  size_t cols() const;  // 2-D only

  double value() const;  // scalar tensors only
  double at(size_t i) const { return (*data_)[i]; }
  double at(size_t r, size_t c) const;
  std::span<const double> data() const;

  bool defined() const { return data_ != nullptr; }
  bool on_tape() const { return tape_ != nullptr; }
  int node() const { return node_; }
  GradTape* tape() const { return tape_; }
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  friend class GradTape;
  std::vector<size_t> shape_;
  std::shared_ptr<const std::vector<double>> data_;
  GradTape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Recording order is the topological order; backward()
// seeds d(loss)/d(loss) = 1 and replays the records exactly once, last to
// first, accumulating into dense per-node gradient buffers. Accumulation
// order is fixed by the recording, so gradients are bit-reproducible.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Registers a differentiable input; gradients are available for every leaf
  // after backward().
  Tensor leaf(const Tensor& value);

  // bw(tape, self) reads grad_buf(self) and accumulates into the parents'
  // buffers. Null bw marks a leaf.
  using BackwardFn = std::function<void(GradTape&, int self)>;
  Tensor record(std::vector<size_t> shape,
                std::shared_ptr<const std::vector<double>> data,
                std::vector<int> parents, BackwardFn bw);

  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. t. Zero tensor for nodes the loss
  // never touched.
  Tensor grad(const Tensor& t) const;

  size_t n_nodes() const { return nodes_.size(); }
  bool ran_backward() const { return ran_backward_; }
  std::vector<double>& grad_buf(int node) { return grads_[static_cast<size_t>(node)]; }

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn backward;
    std::vector<size_t> shape;
    size_t numel;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;
};

// ---- differentiable ops ----
// Each op computes eagerly; if any operand is on a tape the result is
// recorded there. Operands on different tapes are an error. Every op checks
// its output for NaN/Inf and throws NumericError on violation.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor add_row_bias(const Tensor& a, const Tensor& b); // b broadcast over rows
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor log_elem(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);   // gradient zero outside (lo, hi)
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);                          // tanh approximation
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, size_t row_begin, size_t row_end);
Tensor slice_cols(const Tensor& a, size_t col_begin, size_t col_end);
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor sum(const Tensor& a);  // scalar

// Scalar-valued function rebuilt on a fresh tape per evaluation.
using TapeFn = std::function<Tensor(GradTape&, const Tensor&)>;

// Max relative error between the tape gradient of f at x and central finite
// differences with step h. Relative error uses denominator max(|a|,|b|,1e-8).
double finite_diff_check(const TapeFn& f, const Tensor& x, double h = 1e-5);

// Directional variant: compares <grad f, v> with (f(x+hv) - f(x-hv)) / 2h
// over n_dirs random directions. Deep compositions have coordinates whose
// true gradient sits below the f64 central-difference noise floor
// (~1e-11 absolute); random directions keep the denominator at the scale of
// the full gradient while still covering every coordinate.
double finite_diff_check_directional(const TapeFn& f, const Tensor& x,
                                     size_t n_dirs, uint64_t seed,
                                     double h = 1e-5);

}  // namespace vitcat
