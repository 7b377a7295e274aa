#pragma once

// Toy CNN backbone producing a 4-level feature pyramid at strides 4/8/16/32,
// the same pyramid geometry a ResNet-style backbone would give. Grayscale
// single-channel input.

#include <array>
#include <string>
#include <vector>

#include "neckbench/core.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/params.hpp"

namespace neckbench {

struct BackboneConfig {
  int stem_channels = 16;
  std::array<int, 4> stage_channels = {16, 32, 64, 128};
  int blocks_per_stage = 1;

  void validate() const {
    if (stem_channels < 1)
      throw std::invalid_argument("backbone: stem_channels must be >= 1");
    if (blocks_per_stage < 0)
      throw std::invalid_argument("backbone: blocks_per_stage must be >= 0");
    for (int i = 1; i < 4; ++i)
      if (stage_channels[i] < stage_channels[i - 1])
        throw std::invalid_argument(
            "backbone: stage_channels must be non-decreasing");
  }
};

struct PyramidFeatures {
  std::array<Tensor, 4> levels;
  static constexpr std::array<int, 4> strides = {4, 8, 16, 32};
};

/// Stem: two stride-2 3x3 convs (-> stride 4, gives fm0). Then three stages
/// of one stride-2 3x3 conv plus residual 3x3 blocks (-> fm1..fm3).
class Backbone {
 public:
  Backbone(ParamStore& store, const BackboneConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const double g = std::sqrt(2.0);  // every conv here feeds a ReLU
    stem0_w_ = store.conv_weight("backbone.stem0.weight", cfg.stem_channels, 1,
                                 3, 3, g);
    stem0_b_ = store.bias("backbone.stem0.bias", cfg.stem_channels);
    stem1_w_ = store.conv_weight("backbone.stem1.weight", cfg.stage_channels[0],
                                 cfg.stem_channels, 3, 3, g);
    stem1_b_ = store.bias("backbone.stem1.bias", cfg.stage_channels[0]);
    for (int s = 1; s < 4; ++s) {
      const std::string base = "backbone.stage" + std::to_string(s);
      down_w_[s - 1] = store.conv_weight(base + ".down.weight",
                                         cfg.stage_channels[s],
                                         cfg.stage_channels[s - 1], 3, 3, g);
      down_b_[s - 1] = store.bias(base + ".down.bias", cfg.stage_channels[s]);
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        block_w_[s - 1].push_back(store.conv_weight(
            base + ".block" + std::to_string(b) + ".weight",
            cfg.stage_channels[s], cfg.stage_channels[s], 3, 3, g));
        block_b_[s - 1].push_back(store.bias(
            base + ".block" + std::to_string(b) + ".bias",
            cfg.stage_channels[s]));
      }
    }
  }

  PyramidFeatures forward(const Tensor& image) const {
    const Shape& s = image.shape();
    if (s.c != 1)
      throw std::invalid_argument("backbone: expected 1-channel input, got " +
                                  s.str());
    if (s.h % 32 != 0 || s.w % 32 != 0)
      throw std::invalid_argument("backbone: input dims must be divisible by "
                                  "32, got " + s.str());
    PyramidFeatures out;
    Tensor x = relu(conv2d(image, stem0_w_, &stem0_b_, 2, 1));
    x = relu(conv2d(x, stem1_w_, &stem1_b_, 2, 1));
    out.levels[0] = x;
    for (int st = 1; st < 4; ++st) {
      x = relu(conv2d(x, down_w_[st - 1], &down_b_[st - 1], 2, 1));
      for (std::size_t b = 0; b < block_w_[st - 1].size(); ++b)
        x = relu(add(x, conv2d(x, block_w_[st - 1][b], &block_b_[st - 1][b], 1, 1)));
      out.levels[st] = x;
    }
    return out;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Tensor stem0_w_, stem0_b_, stem1_w_, stem1_b_;
  std::array<Tensor, 3> down_w_, down_b_;
  std::array<std::vector<Tensor>, 3> block_w_, block_b_;
};

/// Bilinear input resize (stretch to target; no letterboxing). Target dims
/// must be divisible by 32 so the pyramid shapes stay exact.
inline Tensor resize_input(const Tensor& image, int target_h, int target_w) {
  if (target_h % 32 != 0 || target_w % 32 != 0)
    throw std::invalid_argument("resize_input: target dims must be divisible "
                                "by 32");
  const Shape& s = image.shape();
  if (s.h == target_h && s.w == target_w) return image;
  return resize_bilinear(image, target_h, target_w);
}

}  // namespace neckbench
