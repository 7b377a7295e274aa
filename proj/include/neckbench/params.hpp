#pragma once

// Named trainable parameters. Conv weights draw from a split-mix stream
// seeded per parameter name, so initialization is independent of
// construction order and stable across runs.

#include <string>
#include <vector>

#include "neckbench/core.hpp"

namespace neckbench {

struct Parameter {
  std::string name;
  Tensor tensor;  // requires_grad is always on
};

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Conv weight, uniform in +-gain*sqrt(3 / fan_in). gain 1 preserves
  /// activation variance through a linear conv; pass sqrt(2) when a ReLU
  /// follows. Keeping the scale right matters here: deep conv stacks without
  /// normalization otherwise shrink gradients geometrically.
  Tensor conv_weight(const std::string& name, int c_out, int c_in, int kh,
                     int kw, double gain = 1.0) {
    Tensor t = Tensor::zeros({c_out, c_in, kh, kw}, true);
    const double bound =
        gain * std::sqrt(3.0 / (static_cast<double>(c_in) * kh * kw));
    SplitMix64 rng(derive_seed(seed_, name));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    add(name, t);
    return t;
  }

  /// Bias vector (stored as 1xCx1x1), zero-initialized.
  Tensor bias(const std::string& name, int c_out, double init = 0.0) {
    Tensor t = Tensor::full({1, c_out, 1, 1}, init, true);
    add(name, t);
    return t;
  }

  const std::vector<Parameter>& params() const { return params_; }

  Parameter& find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::runtime_error("ParamStore: unknown parameter '" + name + "'");
  }

  /// Total element count over all parameters.
  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  void add(const std::string& name, const Tensor& t) {
    for (const auto& p : params_)
      if (p.name == name)
        throw std::runtime_error("ParamStore: duplicate parameter name '" +
                                 name + "'");
    params_.push_back({name, t});
  }

  std::uint64_t seed_;
  std::vector<Parameter> params_;
};

}  // namespace neckbench
