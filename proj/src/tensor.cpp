#include "hepi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace hepi {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

bool want_grad(Tape* tp, const Tensor& a) { return tp && a.requires_grad(); }
bool want_grad(Tape* tp, const Tensor& a, const Tensor& b) {
  return tp && (a.requires_grad() || b.requires_grad());
}

void require(bool cond, const char* msg) {
  if (!cond) throw NumericsError(msg);
}

}  // namespace

Tensor::Tensor(int64_t rows, int64_t cols, bool requires_grad) {
  require(rows >= 0 && cols >= 0, "tensor: negative extent");
  d_ = std::make_shared<TensorData>();
  d_->shape = {rows, cols};
  d_->val.assign(static_cast<size_t>(rows * cols), 0.0);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(int64_t rows, int64_t cols) { return Tensor(rows, cols); }

Tensor Tensor::full(int64_t rows, int64_t cols, double v) {
  Tensor t(rows, cols);
  for (auto& x : t.d_->val) x = v;
  return t;
}

Tensor Tensor::scalar(double v) { return full(1, 1, v); }

Tensor Tensor::from(std::vector<double> v, int64_t rows, int64_t cols,
                    bool requires_grad) {
  require(static_cast<int64_t>(v.size()) == rows * cols, "tensor: data size mismatch");
  Tensor t(rows, cols, requires_grad);
  t.d_->val = std::move(v);
  return t;
}

double Tensor::item() const {
  require(numel() == 1, "item: tensor is not scalar");
  return d_->val[0];
}

Tensor Tensor::clone() const {
  Tensor t(rows(), cols());
  t.d_->val = d_->val;
  return t;
}

double* Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->val.size(), 0.0);
  return d_->grad.data();
}

void Tensor::zero_grad() {
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

void Tape::backward(Tensor loss) {
  if (consumed_) throw NumericsError("tape: second backward without reset");
  require(loss.numel() == 1, "backward: loss must be scalar");
  consumed_ = true;
  loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::reset() {
  steps_.clear();
  consumed_ = false;
}

void check_finite(const Tensor& t, const char* op) {
  const double* v = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i]))
      throw NumericsError(std::string(op) + ": non-finite value produced");
  }
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tp) {
  require(a.cols() == b.rows(), "matmul: inner dims mismatch");
  Tensor out(a.rows(), b.cols(), want_grad(tp, a, b));
  mm_nn(out.data(), a.data(), b.data(), a.rows(), a.cols(), b.cols());
  check_finite(out, "matmul");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od] {
      if (od->grad.empty()) return;
      const int64_t m = ad->shape[0], k = ad->shape[1], n = bd->shape[1];
      Tensor aw, bw;  // views for grad alloc
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
        mm_nt(ad->grad.data(), od->grad.data(), bd->val.data(), m, n, k);
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
        mm_tn(bd->grad.data(), ad->val.data(), od->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tp) {
  const bool bcast = (b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols());
  require(bcast || (a.rows() == b.rows() && a.cols() == b.cols()),
          "add: shape mismatch");
  Tensor out(a.rows(), a.cols(), want_grad(tp, a, b));
  const int64_t r = a.rows(), c = a.cols();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.data()[i * c + j] = a.data()[i * c + j] + b.data()[(bcast ? 0 : i) * c + j];
  check_finite(out, "add");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od, bcast, r, c] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
        for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
        if (bcast) {
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) bd->grad[j] += od->grad[i * c + j];
        } else {
          for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tp) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tensor out(a.rows(), a.cols(), want_grad(tp, a, b));
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
        for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
        for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tp) {
  const bool bcast = (b.cols() == 1 && a.cols() != 1 && b.rows() == a.rows());
  require(bcast || (a.rows() == b.rows() && a.cols() == b.cols()),
          "mul: shape mismatch");
  Tensor out(a.rows(), a.cols(), want_grad(tp, a, b));
  const int64_t r = a.rows(), c = a.cols();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.data()[i * c + j] = a.data()[i * c + j] * b.data()[bcast ? i : i * c + j];
  check_finite(out, "mul");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od, bcast, r, c] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j)
            ad->grad[i * c + j] += od->grad[i * c + j] * bd->val[bcast ? i : i * c + j];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
        if (bcast) {
          for (int64_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < c; ++j)
              acc += od->grad[i * c + j] * ad->val[i * c + j];
            bd->grad[i] += acc;
          }
        } else {
          for (int64_t i = 0; i < r * c; ++i)
            bd->grad[i] += od->grad[i] * ad->val[i];
        }
      }
    });
  }
  return out;
}

Tensor divide(const Tensor& a, const Tensor& b, Tape* tp) {
  const bool bcast = (b.cols() == 1 && a.cols() != 1 && b.rows() == a.rows());
  require(bcast || (a.rows() == b.rows() && a.cols() == b.cols()),
          "divide: shape mismatch");
  Tensor out(a.rows(), a.cols(), want_grad(tp, a, b));
  const int64_t r = a.rows(), c = a.cols();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.data()[i * c + j] = a.data()[i * c + j] / b.data()[bcast ? i : i * c + j];
  check_finite(out, "divide");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od, bcast, r, c] {
      if (od->grad.empty()) return;
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) {
          const double g = od->grad[i * c + j];
          if (g == 0.0) continue;
          const int64_t bi = bcast ? i : i * c + j;
          const double bv = bd->val[bi];
          if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
            ad->grad[i * c + j] += g / bv;
          }
          if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
            bd->grad[bi] -= g * ad->val[i * c + j] / (bv * bv);
          }
        }
    });
  }
  return out;
}

namespace {

template <typename F, typename G>
Tensor unary_op(const Tensor& a, Tape* tp, const char* name, F fwd, G dfd) {
  Tensor out(a.rows(), a.cols(), want_grad(tp, a));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  check_finite(out, name);
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od, dfd, n] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      for (int64_t i = 0; i < n; ++i)
        ad->grad[i] += od->grad[i] * dfd(ad->val[i], od->val[i]);
    });
  }
  return out;
}

}  // namespace

Tensor scale(const Tensor& a, double c, Tape* tp) {
  return unary_op(a, tp, "scale", [c](double x) { return x * c; },
                  [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c, Tape* tp) {
  return unary_op(a, tp, "add_const", [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a, Tape* tp) { return scale(a, -1.0, tp); }

Tensor exp_t(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "square", [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Tensor gelu(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "gelu",
                  [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                  [](double x, double) {
                    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const double dens = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    return phi + x * dens;
                  });
}

Tensor relu(const Tensor& a, Tape* tp) {
  return unary_op(a, tp, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi, Tape* tp) {
  return unary_op(a, tp, "clamp",
                  [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                  [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& a, double lo, Tape* tp) {
  return unary_op(a, tp, "clamp_min", [lo](double x) { return x < lo ? lo : x; },
                  [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b, Tape* tp) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "minimum: shape mismatch");
  Tensor out(a.rows(), a.cols(), want_grad(tp, a, b));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = a.data()[i] <= b.data()[i] ? a.data()[i] : b.data()[i];
  check_finite(out, "minimum");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
    tp->record([ad, bd, od, n] {
      if (od->grad.empty()) return;
      if (ad->requires_grad && ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      if (bd->requires_grad && bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        if (ad->val[i] <= bd->val[i]) {
          if (ad->requires_grad) ad->grad[i] += od->grad[i];
        } else if (bd->requires_grad) {
          bd->grad[i] += od->grad[i];
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tp) {
  Tensor out(1, 1, want_grad(tp, a));
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
  out.data()[0] = acc;
  check_finite(out, "sum");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      const double g = od->grad[0];
      for (auto& x : ad->grad) x += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a, Tape* tp) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a, tp), 1.0 / static_cast<double>(a.numel()), tp);
}

Tensor row_sum(const Tensor& a, Tape* tp) {
  Tensor out(a.rows(), 1, want_grad(tp, a));
  const int64_t r = a.rows(), c = a.cols();
  for (int64_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < c; ++j) acc += a.data()[i * c + j];
    out.data()[i] = acc;
  }
  check_finite(out, "row_sum");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od, r, c] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      for (int64_t i = 0; i < r; ++i) {
        const double g = od->grad[i];
        for (int64_t j = 0; j < c; ++j) ad->grad[i * c + j] += g;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& ids, Tape* tp) {
  const int64_t c = a.cols(), e = static_cast<int64_t>(ids.size());
  for (int id : ids)
    require(id >= 0 && id < a.rows(), "gather_rows: index out of range");
  Tensor out(e, c, want_grad(tp, a));
  for (int64_t i = 0; i < e; ++i)
    std::memcpy(out.data() + i * c, a.data() + static_cast<int64_t>(ids[i]) * c,
                sizeof(double) * c);
  check_finite(out, "gather_rows");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od, ids, e, c] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      for (int64_t i = 0; i < e; ++i) {
        double* dst = ad->grad.data() + static_cast<int64_t>(ids[i]) * c;
        const double* g = od->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor segment_sum(const Tensor& a, const std::vector<int>& ids,
                   int64_t n_segments, Tape* tp) {
  require(static_cast<int64_t>(ids.size()) == a.rows(),
          "segment_sum: ids size mismatch");
  for (int id : ids)
    require(id >= 0 && id < n_segments, "segment_sum: segment id out of range");
  const int64_t c = a.cols(), e = a.rows();
  Tensor out(n_segments, c, want_grad(tp, a));
  for (int64_t i = 0; i < e; ++i) {
    double* dst = out.data() + static_cast<int64_t>(ids[i]) * c;
    const double* src = a.data() + i * c;
    for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  check_finite(out, "segment_sum");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od, ids, e, c] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      for (int64_t i = 0; i < e; ++i) {
        const double* g = od->grad.data() + static_cast<int64_t>(ids[i]) * c;
        double* dst = ad->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tp) {
  require(!parts.empty(), "concat_cols: no parts");
  const int64_t r = parts[0].rows();
  int64_t ctot = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols: row mismatch");
    ctot += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out(r, ctot, tp && rg);
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t c = p.cols();
    for (int64_t i = 0; i < r; ++i)
      std::memcpy(out.data() + i * ctot + off, p.data() + i * c, sizeof(double) * c);
    off += c;
  }
  check_finite(out, "concat_cols");
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorData>> pd;
    for (const auto& p : parts) pd.push_back(p.ptr());
    auto od = out.ptr();
    tp->record([pd, od, r, ctot] {
      if (od->grad.empty()) return;
      int64_t off = 0;
      for (auto& p : pd) {
        const int64_t c = p->shape[1];
        if (p->requires_grad) {
          if (p->grad.empty()) p->grad.assign(p->val.size(), 0.0);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
              p->grad[i * c + j] += od->grad[i * ctot + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t n, Tape* tp) {
  require(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols: range out of bounds");
  const int64_t r = a.rows(), c = a.cols();
  Tensor out(r, n, want_grad(tp, a));
  for (int64_t i = 0; i < r; ++i)
    std::memcpy(out.data() + i * n, a.data() + i * c + c0, sizeof(double) * n);
  check_finite(out, "slice_cols");
  if (out.requires_grad()) {
    auto ad = a.ptr(); auto od = out.ptr();
    tp->record([ad, od, c0, n, r, c] {
      if (od->grad.empty()) return;
      if (ad->grad.empty()) ad->grad.assign(ad->val.size(), 0.0);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < n; ++j)
          ad->grad[i * c + c0 + j] += od->grad[i * n + j];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tape* tp, double eps) {
  const int64_t r = x.rows(), c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c, "layer_norm: gamma shape");
  require(beta.rows() == 1 && beta.cols() == c, "layer_norm: beta shape");
  bool rg = tp && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor out(r, c, rg);
  std::vector<double> inv_sd(r), mu(r);
  for (int64_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double m = 0.0;
    for (int64_t j = 0; j < c; ++j) m += xi[j];
    m /= static_cast<double>(c);
    double v = 0.0;
    for (int64_t j = 0; j < c; ++j) v += (xi[j] - m) * (xi[j] - m);
    v /= static_cast<double>(c);
    const double isd = 1.0 / std::sqrt(v + eps);
    mu[i] = m;
    inv_sd[i] = isd;
    double* oi = out.data() + i * c;
    for (int64_t j = 0; j < c; ++j)
      oi[j] = gamma.data()[j] * ((xi[j] - m) * isd) + beta.data()[j];
  }
  check_finite(out, "layer_norm");
  if (rg) {
    auto xd = x.ptr(); auto gd = gamma.ptr(); auto bd = beta.ptr(); auto od = out.ptr();
    tp->record([xd, gd, bd, od, mu, inv_sd, r, c] {
      if (od->grad.empty()) return;
      if (xd->requires_grad && xd->grad.empty()) xd->grad.assign(xd->val.size(), 0.0);
      if (gd->requires_grad && gd->grad.empty()) gd->grad.assign(gd->val.size(), 0.0);
      if (bd->requires_grad && bd->grad.empty()) bd->grad.assign(bd->val.size(), 0.0);
      for (int64_t i = 0; i < r; ++i) {
        const double* xi = xd->val.data() + i * c;
        const double* g = od->grad.data() + i * c;
        const double isd = inv_sd[i], m = mu[i];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          const double xh = (xi[j] - m) * isd;
          const double dxh = g[j] * gd->val[j];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          if (gd->requires_grad) gd->grad[j] += g[j] * xh;
          if (bd->requires_grad) bd->grad[j] += g[j];
        }
        if (xd->requires_grad) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (int64_t j = 0; j < c; ++j) {
            const double xh = (xi[j] - m) * isd;
            const double dxh = g[j] * gd->val[j];
            xd->grad[i * c + j] +=
                isd * (dxh - inv_c * sum_dxh - xh * inv_c * sum_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor fiber_mix(const Tensor& f, const Tensor& table, int64_t n_ori, Tape* tp) {
  const int64_t c = f.cols();
  require(f.rows() % n_ori == 0, "fiber_mix: rows not divisible by n_ori");
  require(table.rows() == n_ori * n_ori && table.cols() == c, "fiber_mix: table shape");
  const int64_t n = f.rows() / n_ori;
  const double inv_o = 1.0 / static_cast<double>(n_ori);
  Tensor out(f.rows(), c, want_grad(tp, f, table));
  for (int64_t nn = 0; nn < n; ++nn)
    for (int64_t o = 0; o < n_ori; ++o) {
      double* dst = out.data() + (nn * n_ori + o) * c;
      for (int64_t op = 0; op < n_ori; ++op) {
        const double* k = table.data() + (o * n_ori + op) * c;
        const double* src = f.data() + (nn * n_ori + op) * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += k[j] * src[j];
      }
      for (int64_t j = 0; j < c; ++j) dst[j] *= inv_o;
    }
  check_finite(out, "fiber_mix");
  if (out.requires_grad()) {
    auto fd = f.ptr(); auto td = table.ptr(); auto od = out.ptr();
    tp->record([fd, td, od, n, n_ori, c, inv_o] {
      if (od->grad.empty()) return;
      if (fd->requires_grad && fd->grad.empty()) fd->grad.assign(fd->val.size(), 0.0);
      if (td->requires_grad && td->grad.empty()) td->grad.assign(td->val.size(), 0.0);
      for (int64_t nn = 0; nn < n; ++nn)
        for (int64_t o = 0; o < n_ori; ++o) {
          const double* g = od->grad.data() + (nn * n_ori + o) * c;
          for (int64_t op = 0; op < n_ori; ++op) {
            const double* k = td->val.data() + (o * n_ori + op) * c;
            const double* src = fd->val.data() + (nn * n_ori + op) * c;
            if (fd->requires_grad) {
              double* df = fd->grad.data() + (nn * n_ori + op) * c;
              for (int64_t j = 0; j < c; ++j) df[j] += inv_o * g[j] * k[j];
            }
            if (td->requires_grad) {
              double* dk = td->grad.data() + (o * n_ori + op) * c;
              for (int64_t j = 0; j < c; ++j) dk[j] += inv_o * g[j] * src[j];
            }
          }
        }
    });
  }
  return out;
}

Tensor detach(const Tensor& a) {
  Tensor out(a.rows(), a.cols(), false);
  std::memcpy(out.data(), a.data(), sizeof(double) * a.numel());
  return out;
}

Tensor vcat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "vcat: no parts");
  const int64_t c = parts[0].cols();
  int64_t r = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "vcat: column mismatch");
    r += p.rows();
  }
  Tensor out(r, c);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off * c, p.data(), sizeof(double) * p.numel());
    off += p.rows();
  }
  return out;
}

std::vector<double> segment_max_values(const Tensor& a, const std::vector<int>& ids,
                                       int64_t n_segments) {
  require(a.cols() == 1, "segment_max: expects column tensor");
  std::vector<double> out(static_cast<size_t>(n_segments),
                          -std::numeric_limits<double>::infinity());
  for (int64_t i = 0; i < a.rows(); ++i)
    out[ids[i]] = std::max(out[ids[i]], a.data()[i]);
  for (auto& v : out)
    if (!std::isfinite(v)) v = 0.0;  // empty segment
  return out;
}

}  // namespace hepi
