#include "hepi/nn.hpp"

#include <cmath>

namespace hepi {

double Rng::uniform(double a, double b) {
  // 53-bit mantissa draw, deterministic across platforms.
  const double u = (g_() >> 11) * 0x1.0p-53;
  return a + (b - a) * u;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do { u1 = uniform(); } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * M_PI * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw NumericsError("uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t lim = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do { x = g_(); } while (x >= lim);
  return static_cast<int64_t>(x % un);
}

uint64_t Rng::split(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the pair.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : items_)
    if (n == name) throw NumericsError("param store: duplicate name " + name);
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::make(const std::string& name, int64_t rows, int64_t cols,
                        Rng& rng, double scale) {
  Tensor t(rows, cols);
  if (scale < 0.0) {
    const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-lim, lim);
  } else if (scale > 0.0) {
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = scale * rng.normal();
  }
  return add(name, t);
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw NumericsError("param store: missing name " + name);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

int64_t ParamStore::numel() const {
  int64_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

MlpParams MlpParams::create(const MlpSpec& spec, ParamStore& store,
                            const std::string& prefix, Rng& rng,
                            double init_scale) {
  if (spec.widths.size() < 2) throw NumericsError("mlp: needs >= 2 widths");
  MlpParams p;
  p.spec = spec;
  const size_t layers = spec.widths.size() - 1;
  for (size_t l = 0; l < layers; ++l) {
    const std::string tag = prefix + "/w" + std::to_string(l);
    p.w.push_back(store.make(tag, spec.widths[l], spec.widths[l + 1], rng, init_scale));
    p.b.push_back(store.add(prefix + "/b" + std::to_string(l),
                            Tensor::zeros(1, spec.widths[l + 1])));
    const bool hidden = l + 1 < layers;
    if (hidden && spec.use_layer_norm) {
      p.ln_gamma.push_back(store.add(prefix + "/ln_g" + std::to_string(l),
                                     Tensor::full(1, spec.widths[l + 1], 1.0)));
      p.ln_beta.push_back(store.add(prefix + "/ln_b" + std::to_string(l),
                                    Tensor::zeros(1, spec.widths[l + 1])));
    }
  }
  return p;
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p, Tape* tp) {
  Tensor h = x;
  const size_t layers = p.w.size();
  for (size_t l = 0; l < layers; ++l) {
    h = add(matmul(h, p.w[l], tp), p.b[l], tp);
    const bool hidden = l + 1 < layers;
    if (hidden || p.spec.final_act)
      h = p.spec.act == Act::gelu ? gelu(h, tp) : relu(h, tp);
    if (hidden && p.spec.use_layer_norm)
      h = layer_norm(h, p.ln_gamma[l], p.ln_beta[l], tp);
  }
  return h;
}

void Adam::step(ParamStore& params) {
  const auto& items = params.items();
  if (m.empty()) {
    m.resize(items.size());
    v.resize(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
      m[i].assign(items[i].second.numel(), 0.0);
      v[i].assign(items[i].second.numel(), 0.0);
    }
  }
  if (m.size() != items.size()) throw NumericsError("adam: param count changed");
  t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].second;
    const int64_t n = p.numel();
    const bool has_g = p.has_grad();
    const double* g = has_g ? p.ptr()->grad.data() : nullptr;
    double* pv = p.data();
    for (int64_t j = 0; j < n; ++j) {
      const double gj = has_g ? g[j] : 0.0;
      if (!std::isfinite(gj)) throw NumericsError("adam: non-finite gradient");
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
      const double mh = m[i][j] / bc1;
      const double vh = v[i][j] / bc2;
      pv[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace hepi
