#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hepi {

struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorData {
  std::vector<int64_t> shape;
  std::vector<double> val;
  std::vector<double> grad;  // allocated lazily, same length as val
  bool requires_grad = false;
};

// Shared-storage handle over a dense row-major f64 array. Rank 2 in practice;
// a scalar is [1,1]. Copies are shallow.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int64_t rows, int64_t cols, bool requires_grad = false);

  static Tensor zeros(int64_t rows, int64_t cols);
  static Tensor full(int64_t rows, int64_t cols, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<double> v, int64_t rows, int64_t cols,
                     bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  int64_t rows() const { return d_->shape[0]; }
  int64_t cols() const { return d_->shape[1]; }
  int64_t numel() const { return rows() * cols(); }
  const std::vector<int64_t>& shape() const { return d_->shape; }

  double* data() { return d_->val.data(); }
  const double* data() const { return d_->val.data(); }
  double& at(int64_t r, int64_t c) { return d_->val[r * cols() + c]; }
  double at(int64_t r, int64_t c) const { return d_->val[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }
  // Zeroed on first touch; call only on tensors that participate in a backward.
  double* grad();
  bool has_grad() const { return !d_->grad.empty(); }
  void zero_grad();

  // Deep copy with fresh storage; gradients and tape links are not carried.
  Tensor clone() const;

  std::shared_ptr<TensorData> ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Records op closures in execution order; backward replays them in exact
// reverse order, accumulating additively into .grad. Single-shot: a second
// backward without reset() throws.
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
  void backward(Tensor loss);
  void reset();
  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

// Every op validates shapes, computes out.val, verifies all outputs finite
// (NaN/Inf raises NumericsError naming the op), and if tp != nullptr and any
// differentiable input requires grad, records the backward closure.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tp);
Tensor add(const Tensor& a, const Tensor& b, Tape* tp);       // same shape or b=[1,C]
Tensor sub(const Tensor& a, const Tensor& b, Tape* tp);       // same shape
Tensor mul(const Tensor& a, const Tensor& b, Tape* tp);       // same shape or b=[R,1]
Tensor divide(const Tensor& a, const Tensor& b, Tape* tp);    // same shape or b=[R,1]
Tensor scale(const Tensor& a, double c, Tape* tp);
Tensor add_const(const Tensor& a, double c, Tape* tp);
Tensor neg(const Tensor& a, Tape* tp);
Tensor exp_t(const Tensor& a, Tape* tp);
Tensor log_t(const Tensor& a, Tape* tp);
Tensor sqrt_t(const Tensor& a, Tape* tp);
Tensor square(const Tensor& a, Tape* tp);
Tensor gelu(const Tensor& a, Tape* tp);
Tensor relu(const Tensor& a, Tape* tp);
Tensor clamp(const Tensor& a, double lo, double hi, Tape* tp);  // grad zero outside
Tensor clamp_min(const Tensor& a, double lo, Tape* tp);
Tensor minimum(const Tensor& a, const Tensor& b, Tape* tp);     // ties take a
Tensor sum(const Tensor& a, Tape* tp);    // -> [1,1]
Tensor mean(const Tensor& a, Tape* tp);   // -> [1,1]
Tensor row_sum(const Tensor& a, Tape* tp);  // [R,C] -> [R,1]

// out[e,:] = a[ids[e],:]
Tensor gather_rows(const Tensor& a, const std::vector<int>& ids, Tape* tp);
// out[s,:] = sum over rows e with ids[e]==s; empty segments stay zero.
// Accumulation follows row order, so results are reproducible bit-for-bit.
Tensor segment_sum(const Tensor& a, const std::vector<int>& ids,
                   int64_t n_segments, Tape* tp);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tp);
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t n, Tape* tp);

// Per-row normalization over columns with affine gamma/beta ([1,C]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tape* tp, double eps = 1e-5);

// Orientation-axis mixing for fiber features laid out [N*O, C]:
//   out[n*O+o, c] = (1/O) * sum_{o'} table[o*O+o', c] * f[n*O+o', c]
Tensor fiber_mix(const Tensor& f, const Tensor& table, int64_t n_ori, Tape* tp);

// Detached copy: same values, no grad flow.
Tensor detach(const Tensor& a);

// Plain row concatenation for assembling constant inputs (no autodiff).
Tensor vcat(const std::vector<Tensor>& parts);

// Plain max per segment (no autodiff; used for stable softmax shifts).
std::vector<double> segment_max_values(const Tensor& a, const std::vector<int>& ids,
                                       int64_t n_segments);

void check_finite(const Tensor& t, const char* op);

}  // namespace hepi
