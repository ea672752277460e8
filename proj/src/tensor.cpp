#include "vitcat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vitcat {

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

void ensure_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

// Tape shared by the operands, if any. Mixing tapes is an error.
GradTape* common_tape(std::initializer_list<const Tensor*> ts) {
  GradTape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ShapeError("operands recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

using Buf = std::shared_ptr<const std::vector<double>>;

Buf freeze(std::vector<double>&& v, const char* op) {
  ensure_finite(v, op);
  return std::make_shared<const std::vector<double>>(std::move(v));
}

std::vector<int> live_parents(std::initializer_list<int> ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id >= 0) out.push_back(id);
  return out;
}

}  // namespace

// ---- Tensor ----

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(shape_numel(shape_), 0.0)) {}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(data))) {
  if (data_->size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length does not match shape");
  }
}

Tensor::Tensor(std::vector<size_t> shape, Buf data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (!data_ || data_->size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length does not match shape");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> v) {
  size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::vec(std::vector<double> v) {
  size_t n = v.size();
  return Tensor({n}, std::move(v));
}

size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D");
  return shape_[0];
}

size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D");
  return shape_[1];
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value(): tensor is not scalar");
  return (*data_)[0];
}

double Tensor::at(size_t r, size_t c) const { return (*data_)[r * cols() + c]; }

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

bool Tensor::all_finite() const {
  for (double x : data())
    if (!std::isfinite(x)) return false;
  return true;
}

// ---- GradTape ----

Tensor GradTape::leaf(const Tensor& value) {
  check_defined(value, "leaf");
  Tensor out;
  out.shape_ = value.shape_;
  out.data_ = value.data_;
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, nullptr, value.shape_, value.numel()});
  return out;
}

Tensor GradTape::record(std::vector<size_t> shape, Buf data,
                        std::vector<int> parents, BackwardFn bw) {
  Tensor out(std::move(shape), std::move(data));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(parents), std::move(bw), out.shape_, out.numel()});
  return out;
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.tape() != this || loss.node() < 0) {
    throw ShapeError("backward: loss is not recorded on this tape");
  }
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");

  grads_.assign(nodes_.size(), {});
  for (size_t i = 0; i < nodes_.size(); ++i) grads_[i].assign(nodes_[i].numel, 0.0);
  grads_[static_cast<size_t>(loss.node())][0] = 1.0;

  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, static_cast<int>(i));
  }
  ran_backward_ = true;
}

Tensor GradTape::grad(const Tensor& t) const {
  if (!t.defined() || t.tape() != this || t.node() < 0) {
    throw ShapeError("grad: tensor is not recorded on this tape");
  }
  if (!ran_backward_) throw ShapeError("grad: backward() has not run");
  const auto& buf = grads_[static_cast<size_t>(t.node())];
  return Tensor(t.shape(), std::vector<double>(buf.begin(), buf.end()));
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions do not match");
  }
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  GradTape* tape = common_tape({&a, &b});
  Buf od = freeze(std::move(out), "matmul");
  if (!tape) return Tensor({m, n}, od);
  const int pa = a.node(), pb = b.node();
  return tape->record(
      {m, n}, od, live_parents({pa, pb}),
      [a, b, pa, pb, m, k, n](GradTape& t, int self) {
        const auto& g = t.grad_buf(self);
        if (pa >= 0) {
          auto& ga = t.grad_buf(pa);
          const double* bp = b.data().data();
          // dA += dC * B^T
          for (size_t i = 0; i < m; ++i)
            for (size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (size_t j = 0; j < n; ++j) acc += g[i * n + j] * bp[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (pb >= 0) {
          auto& gb = t.grad_buf(pb);
          const double* ap = a.data().data();
          // dB += A^T * dC
          for (size_t p = 0; p < k; ++p)
            for (size_t i = 0; i < m; ++i) {
              const double av = ap[i * k + p];
              for (size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.ndim() != 2) throw ShapeError("transpose: tensor is not 2-D");
  const size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "transpose");
  if (!tape) return Tensor({n, m}, od);
  const int pa = a.node();
  return tape->record({n, m}, od, live_parents({pa}),
                      [pa, m, n](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t j = 0; j < n; ++j)
                          for (size_t i = 0; i < m; ++i)
                            ga[i * n + j] += g[j * m + i];
                      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  GradTape* tape = common_tape({&a, &b});
  Buf od = freeze(std::move(out), "add");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node(), pb = b.node();
  return tape->record(a.shape(), od, live_parents({pa, pb}),
                      [pa, pb](GradTape& t, int self) {
                        const auto& g = t.grad_buf(self);
                        if (pa >= 0) {
                          auto& ga = t.grad_buf(pa);
                          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        }
                        if (pb >= 0) {
                          auto& gb = t.grad_buf(pb);
                          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                        }
                      });
}

Tensor add_row_bias(const Tensor& a, const Tensor& b) {
  check_defined(a, "add_row_bias");
  check_defined(b, "add_row_bias");
  if (a.ndim() != 2 || b.numel() != a.cols()) {
    throw ShapeError("add_row_bias: bias length must equal column count");
  }
  const size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) + b.at(j);
  GradTape* tape = common_tape({&a, &b});
  Buf od = freeze(std::move(out), "add_row_bias");
  if (!tape) return Tensor({m, n}, od);
  const int pa = a.node(), pb = b.node();
  return tape->record({m, n}, od, live_parents({pa, pb}),
                      [pa, pb, m, n](GradTape& t, int self) {
                        const auto& g = t.grad_buf(self);
                        if (pa >= 0) {
                          auto& ga = t.grad_buf(pa);
                          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        }
                        if (pb >= 0) {
                          auto& gb = t.grad_buf(pb);
                          for (size_t i = 0; i < m; ++i)
                            for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                        }
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  if (!a.same_shape(b)) throw ShapeError("mul: shape mismatch");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  GradTape* tape = common_tape({&a, &b});
  Buf od = freeze(std::move(out), "mul");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node(), pb = b.node();
  return tape->record(a.shape(), od, live_parents({pa, pb}),
                      [a, b, pa, pb](GradTape& t, int self) {
                        const auto& g = t.grad_buf(self);
                        if (pa >= 0) {
                          auto& ga = t.grad_buf(pa);
                          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
                        }
                        if (pb >= 0) {
                          auto& gb = t.grad_buf(pb);
                          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
                        }
                      });
}

Tensor scale(const Tensor& a, double s) {
  check_defined(a, "scale");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "scale");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [pa, s](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                      });
}

Tensor add_scalar(const Tensor& a, double s) {
  check_defined(a, "add_scalar");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + s;
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "add_scalar");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      });
}

Tensor log_elem(const Tensor& a) {
  check_defined(a, "log");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.at(i));
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "log");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [a, pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.at(i);
                      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  check_defined(a, "clamp");
  if (!(lo < hi)) throw ShapeError("clamp: lo must be < hi");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.at(i)));
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "clamp");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [a, pa, lo, hi](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) {
                          const double x = a.at(i);
                          if (x > lo && x < hi) ga[i] += g[i];
                        }
                      });
}

Tensor sigmoid(const Tensor& a) {
  check_defined(a, "sigmoid");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "sigmoid");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [od, pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) {
                          const double s = (*od)[i];
                          ga[i] += g[i] * s * (1.0 - s);
                        }
                      });
}

Tensor relu(const Tensor& a) {
  check_defined(a, "relu");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.at(i));
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "relu");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [a, pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i)
                          if (a.at(i) > 0.0) ga[i] += g[i];
                      });
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  check_defined(a, "gelu");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "gelu");
  if (!tape) return Tensor(a.shape(), od);
  const int pa = a.node();
  return tape->record(a.shape(), od, live_parents({pa}),
                      [a, pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) {
                          const double x = a.at(i);
                          const double u = kGeluScale * (x + kGeluCubic * x * x * x);
                          const double th = std::tanh(u);
                          const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
                          ga[i] += g[i] * (0.5 * (1.0 + th) +
                                           0.5 * x * (1.0 - th * th) * du);
                        }
                      });
}

Tensor softmax_rows(const Tensor& a) {
  check_defined(a, "softmax_rows");
  if (a.ndim() != 2) throw ShapeError("softmax_rows: tensor is not 2-D");
  if (!a.all_finite()) throw NumericError("softmax_rows: non-finite input");
  const size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    double mx = a.at(i, 0);
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
    double total = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out[i * n + j] = e;
      total += e;
    }
    for (size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "softmax_rows");
  if (!tape) return Tensor({m, n}, od);
  const int pa = a.node();
  return tape->record({m, n}, od, live_parents({pa}),
                      [od, pa, m, n](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < m; ++i) {
                          double dot = 0.0;
                          for (size_t j = 0; j < n; ++j)
                            dot += g[i * n + j] * (*od)[i * n + j];
                          for (size_t j = 0; j < n; ++j) {
                            const double s = (*od)[i * n + j];
                            ga[i * n + j] += s * (g[i * n + j] - dot);
                          }
                        }
                      });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  check_defined(a, "layer_norm");
  check_defined(gamma, "layer_norm");
  check_defined(beta, "layer_norm");
  if (a.ndim() != 2) throw ShapeError("layer_norm: input is not 2-D");
  if (eps <= 0.0) throw ShapeError("layer_norm: eps must be positive");
  const size_t m = a.rows(), d = a.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta length must equal row width");
  }
  std::vector<double> xhat(m * d);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * d);
  for (size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (size_t j = 0; j < d; ++j) mean += a.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double c = a.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (size_t j = 0; j < d; ++j) {
      const double xh = (a.at(i, j) - mean) * is;
      xhat[i * d + j] = xh;
      out[i * d + j] = xh * gamma.at(j) + beta.at(j);
    }
  }
  GradTape* tape = common_tape({&a, &gamma, &beta});
  Buf od = freeze(std::move(out), "layer_norm");
  if (!tape) return Tensor({m, d}, od);
  const int pa = a.node(), pg = gamma.node(), pb = beta.node();
  auto xh = std::make_shared<const std::vector<double>>(std::move(xhat));
  auto is = std::make_shared<const std::vector<double>>(std::move(inv_std));
  return tape->record(
      {m, d}, od, live_parents({pa, pg, pb}),
      [gamma, xh, is, pa, pg, pb, m, d](GradTape& t, int self) {
        const auto& g = t.grad_buf(self);
        if (pb >= 0) {
          auto& gb = t.grad_buf(pb);
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (pg >= 0) {
          auto& gg = t.grad_buf(pg);
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < d; ++j)
              gg[j] += g[i * d + j] * (*xh)[i * d + j];
        }
        if (pa >= 0) {
          auto& ga = t.grad_buf(pa);
          const double dd = static_cast<double>(d);
          for (size_t i = 0; i < m; ++i) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gamma.at(j);
              mean_dxh += dxh;
              mean_dxh_xh += dxh * (*xh)[i * d + j];
            }
            mean_dxh /= dd;
            mean_dxh_xh /= dd;
            for (size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gamma.at(j);
              ga[i * d + j] += (*is)[i] * (dxh - mean_dxh -
                                           (*xh)[i * d + j] * mean_dxh_xh);
            }
          }
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  size_t total_rows = 0;
  const size_t n = parts.front().cols();
  for (const Tensor& p : parts) {
    check_defined(p, "concat_rows");
    if (p.ndim() != 2 || p.cols() != n) {
      throw ShapeError("concat_rows: column counts differ");
    }
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(total_rows * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  GradTape* tape = nullptr;
  for (const Tensor& p : parts) {
    GradTape* pt = common_tape({&p});
    if (pt != nullptr) {
      if (tape != nullptr && tape != pt)
        throw ShapeError("operands recorded on different tapes");
      tape = pt;
    }
  }
  Buf od = freeze(std::move(out), "concat_rows");
  if (!tape) return Tensor({total_rows, n}, od);

  std::vector<std::pair<int, size_t>> spans;  // (node, rows)
  std::vector<int> parents;
  for (const Tensor& p : parts) {
    spans.emplace_back(p.node(), p.rows());
    if (p.node() >= 0) parents.push_back(p.node());
  }
  return tape->record({total_rows, n}, od, std::move(parents),
                      [spans, n](GradTape& t, int self) {
                        const auto& g = t.grad_buf(self);
                        size_t row0 = 0;
                        for (const auto& [node, nrows] : spans) {
                          if (node >= 0) {
                            auto& gp = t.grad_buf(node);
                            for (size_t i = 0; i < nrows * n; ++i)
                              gp[i] += g[row0 * n + i];
                          }
                          row0 += nrows;
                        }
                      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const size_t m = parts.front().rows();
  size_t total_cols = 0;
  for (const Tensor& p : parts) {
    check_defined(p, "concat_cols");
    if (p.ndim() != 2 || p.rows() != m) {
      throw ShapeError("concat_cols: row counts differ");
    }
    total_cols += p.cols();
  }
  std::vector<double> out(m * total_cols);
  size_t col0 = 0;
  for (const Tensor& p : parts) {
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < p.cols(); ++j)
        out[i * total_cols + col0 + j] = p.at(i, j);
    col0 += p.cols();
  }
  GradTape* tape = nullptr;
  for (const Tensor& p : parts) {
    GradTape* pt = common_tape({&p});
    if (pt != nullptr) {
      if (tape != nullptr && tape != pt)
        throw ShapeError("operands recorded on different tapes");
      tape = pt;
    }
  }
  Buf od = freeze(std::move(out), "concat_cols");
  if (!tape) return Tensor({m, total_cols}, od);

  std::vector<std::pair<int, size_t>> spans;  // (node, cols)
  std::vector<int> parents;
  for (const Tensor& p : parts) {
    spans.emplace_back(p.node(), p.cols());
    if (p.node() >= 0) parents.push_back(p.node());
  }
  return tape->record({m, total_cols}, od, std::move(parents),
                      [spans, m, total_cols](GradTape& t, int self) {
                        const auto& g = t.grad_buf(self);
                        size_t col0 = 0;
                        for (const auto& [node, ncols] : spans) {
                          if (node >= 0) {
                            auto& gp = t.grad_buf(node);
                            for (size_t i = 0; i < m; ++i)
                              for (size_t j = 0; j < ncols; ++j)
                                gp[i * ncols + j] += g[i * total_cols + col0 + j];
                          }
                          col0 += ncols;
                        }
                      });
}

Tensor slice_rows(const Tensor& a, size_t row_begin, size_t row_end) {
  check_defined(a, "slice_rows");
  if (a.ndim() != 2 || row_begin >= row_end || row_end > a.rows()) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  const size_t n = a.cols(), m = row_end - row_begin;
  std::vector<double> out(a.data().begin() + row_begin * n,
                          a.data().begin() + row_end * n);
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "slice_rows");
  if (!tape) return Tensor({m, n}, od);
  const int pa = a.node();
  return tape->record({m, n}, od, live_parents({pa}),
                      [pa, row_begin, m, n](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < m * n; ++i)
                          ga[row_begin * n + i] += g[i];
                      });
}

Tensor slice_cols(const Tensor& a, size_t col_begin, size_t col_end) {
  check_defined(a, "slice_cols");
  if (a.ndim() != 2 || col_begin >= col_end || col_end > a.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  const size_t m = a.rows(), ac = a.cols(), n = col_end - col_begin;
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, col_begin + j);
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::move(out), "slice_cols");
  if (!tape) return Tensor({m, n}, od);
  const int pa = a.node();
  return tape->record({m, n}, od, live_parents({pa}),
                      [pa, col_begin, m, n, ac](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < m; ++i)
                          for (size_t j = 0; j < n; ++j)
                            ga[i * ac + col_begin + j] += g[i * n + j];
                      });
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: element count mismatch");
  }
  GradTape* tape = common_tape({&a});
  Buf od = std::make_shared<const std::vector<double>>(a.data().begin(),
                                                       a.data().end());
  if (!tape) return Tensor(std::move(shape), od);
  const int pa = a.node();
  return tape->record(std::move(shape), od, live_parents({pa}),
                      [pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const auto& g = t.grad_buf(self);
                        auto& ga = t.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      });
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  double total = 0.0;
  for (double x : a.data()) total += x;
  GradTape* tape = common_tape({&a});
  Buf od = freeze(std::vector<double>{total}, "sum");
  if (!tape) return Tensor({1}, od);
  const int pa = a.node();
  return tape->record({1}, od, live_parents({pa}),
                      [pa](GradTape& t, int self) {
                        if (pa < 0) return;
                        const double g = t.grad_buf(self)[0];
                        auto& ga = t.grad_buf(pa);
                        for (double& v : ga) v += g;
                      });
}

double finite_diff_check(const TapeFn& f, const Tensor& x, double h) {
  if (h <= 0.0) throw ShapeError("finite_diff_check: h must be positive");
  check_defined(x, "finite_diff_check");

  GradTape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(tape, xl);
  if (y.numel() != 1) {
    throw ShapeError("finite_diff_check: f must be scalar-valued");
  }
  tape.backward(y);
  Tensor analytic = tape.grad(xl);

  auto eval = [&f](const Tensor& point) {
    GradTape t;
    Tensor out = f(t, t.leaf(point));
    if (out.numel() != 1) {
      throw ShapeError("finite_diff_check: f must be scalar-valued");
    }
    return out.value();
  };

  std::vector<double> base(x.data().begin(), x.data().end());
  double max_rel = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = eval(Tensor(x.shape(), std::move(plus)));
    const double fm = eval(Tensor(x.shape(), std::move(minus)));
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic.at(i);
    const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-8});
    max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
  }
  return max_rel;
}

double finite_diff_check_directional(const TapeFn& f, const Tensor& x,
                                     size_t n_dirs, uint64_t seed, double h) {
  if (h <= 0.0) throw ShapeError("finite_diff_check: h must be positive");
  check_defined(x, "finite_diff_check");

  GradTape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(tape, xl);
  if (y.numel() != 1) {
    throw ShapeError("finite_diff_check: f must be scalar-valued");
  }
  tape.backward(y);
  Tensor analytic = tape.grad(xl);

  auto eval = [&f](const Tensor& point) {
    GradTape t;
    Tensor out = f(t, t.leaf(point));
    if (out.numel() != 1) {
      throw ShapeError("finite_diff_check: f must be scalar-valued");
    }
    return out.value();
  };

  // hand-rolled uniform draws keep the directions platform-stable
  uint64_t state = seed ^ 0x6a09e667f3bcc909ull;
  auto next_uniform = [&state] {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
  };

  std::vector<double> base(x.data().begin(), x.data().end());
  double max_rel = 0.0;
  for (size_t dir = 0; dir < n_dirs; ++dir) {
    std::vector<double> v(base.size());
    double norm_sq = 0.0;
    for (double& c : v) {
      c = next_uniform();
      norm_sq += c * c;
    }
    // unit directions keep the cubic truncation term at the h^2 scale
    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    for (double& c : v) c *= inv_norm;
    std::vector<double> plus = base, minus = base;
    double along = 0.0;
    for (size_t i = 0; i < base.size(); ++i) {
      plus[i] += h * v[i];
      minus[i] -= h * v[i];
      along += analytic.at(i) * v[i];
    }
    const double fp = eval(Tensor(x.shape(), std::move(plus)));
    const double fm = eval(Tensor(x.shape(), std::move(minus)));
    const double fd = (fp - fm) / (2.0 * h);
    // A direction nearly orthogonal to the gradient carries no signal;
    // flooring at 1e-4 * ||grad|| keeps such draws from dividing by ~0.
    double norm = 0.0;
    for (size_t i = 0; i < base.size(); ++i) norm += analytic.at(i) * analytic.at(i);
    const double denom = std::max(
        {std::fabs(along), std::fabs(fd), 1e-4 * std::sqrt(norm), 1e-8});
    max_rel = std::max(max_rel, std::fabs(along - fd) / denom);
  }
  return max_rel;
}

}  // namespace vitcat
