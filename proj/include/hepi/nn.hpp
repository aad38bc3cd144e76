#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hepi/tensor.hpp"

namespace hepi {

// Deterministic RNG: mt19937_64 + Box-Muller normals. One instance per
// independent stream (per env, per worker); derive child seeds with split().
class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}
  double uniform(double a = 0.0, double b = 1.0);
  double normal();  // N(0,1)
  int64_t uniform_int(int64_t n);  // [0, n)
  uint64_t raw() { return g_(); }
  static uint64_t split(uint64_t seed, uint64_t stream);

 private:
  std::mt19937_64 g_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class Act { gelu, relu };

struct MlpSpec {
  std::vector<int64_t> widths;  // [in, h1, ..., out]
  Act act = Act::gelu;
  bool final_act = false;
  bool use_layer_norm = false;  // after each hidden activation
};

// Named parameter registry in insertion order; the order fixes the Adam slot
// layout and the checkpoint record order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor make(const std::string& name, int64_t rows, int64_t cols, Rng& rng,
              double scale);  // scale<0: Xavier-uniform
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor find(const std::string& name) const;
  void zero_grad();
  int64_t numel() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Tensor> w, b;
  std::vector<Tensor> ln_gamma, ln_beta;
  // init_scale < 0 selects Xavier-uniform per layer.
  static MlpParams create(const MlpSpec& spec, ParamStore& store,
                          const std::string& prefix, Rng& rng,
                          double init_scale = -1.0);
};

Tensor mlp_forward(const Tensor& x, const MlpParams& p, Tape* tp);

// Adam with bias correction. Moment slots are addressed by parameter index in
// the store, so the store must not be reordered between steps.
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;
  void step(ParamStore& params);
};

}  // namespace hepi
