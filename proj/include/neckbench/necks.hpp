#pragma once

// The four interchangeable pyramid-fusion necks: FPN (top-down baseline),
// PANet-style path aggregation (top-down + bottom-up), HRFPN (single
// aggregation head), and MHFPN (two parallel aggregation heads, one over the
// two finest levels and one over the two coarsest, each re-pooled to its
// output scales). All variants emit a uniform 4-level pyramid at strides
// 4/8/16/32 with out_channels channels.

#include <array>
#include <string>
#include <vector>

#include "neckbench/backbone.hpp"
#include "neckbench/core.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/params.hpp"

namespace neckbench {

enum class NeckVariant { kFPN, kPANet, kHRFPN, kMHFPN };
enum class MergeMode { kSum, kConcatConv };

inline const char* to_string(NeckVariant v) {
  switch (v) {
    case NeckVariant::kFPN: return "fpn";
    case NeckVariant::kPANet: return "panet";
    case NeckVariant::kHRFPN: return "hrfpn";
    case NeckVariant::kMHFPN: return "mhfpn";
  }
  return "?";
}

inline NeckVariant neck_variant_from(const std::string& s) {
  if (s == "fpn") return NeckVariant::kFPN;
  if (s == "panet") return NeckVariant::kPANet;
  if (s == "hrfpn") return NeckVariant::kHRFPN;
  if (s == "mhfpn") return NeckVariant::kMHFPN;
  throw std::invalid_argument("unknown neck variant '" + s +
                              "' (expected fpn|panet|hrfpn|mhfpn)");
}

struct NeckConfig {
  NeckVariant variant = NeckVariant::kFPN;
  int out_channels = 32;
  // How two same-stride maps are combined: literal elementwise sum, or
  // channel concat + 1x1 conv (the default). Sum mode is what makes
  // aggregate additive under constant inputs.
  MergeMode merge_mode = MergeMode::kConcatConv;
  PoolMode pool_mode = PoolMode::kMax;
  bool relu_after_convs = false;

  void validate() const {
    if (out_channels < 1)
      throw std::invalid_argument("neck: out_channels must be >= 1");
  }
};

/// The two per-head aggregated maps: small_head at stride 4, large_head at
/// stride 16.
struct AggregatedMap {
  Tensor small_head;
  Tensor large_head;
};

struct NeckOutput {
  std::array<Tensor, 4> levels;
  static constexpr std::array<int, 4> strides = {4, 8, 16, 32};
};

class Neck {
 public:
  Neck(ParamStore& store, const NeckConfig& cfg,
       const std::array<int, 4>& in_channels)
      : cfg_(cfg) {
    cfg.validate();
    const int K = cfg.out_channels;
    // init gain for convs that sit in front of the optional ReLU
    const double g = cfg.relu_after_convs ? std::sqrt(2.0) : 1.0;
    for (int i = 0; i < 4; ++i) {
      const std::string base = "neck.lateral" + std::to_string(i);
      lateral_w_[i] = store.conv_weight(base + ".weight", K, in_channels[i], 1, 1);
      lateral_b_[i] = store.bias(base + ".bias", K);
    }
    const bool needs_fpn = cfg.variant != NeckVariant::kHRFPN;
    const bool needs_pa = cfg.variant == NeckVariant::kPANet ||
                          cfg.variant == NeckVariant::kMHFPN;
    if (needs_fpn) {
      for (int i = 0; i < 4; ++i) {
        const std::string base = "neck.fpn_out" + std::to_string(i);
        fpn_out_w_[i] = store.conv_weight(base + ".weight", K, K, 3, 3, g);
        fpn_out_b_[i] = store.bias(base + ".bias", K);
      }
    }
    if (needs_pa) {
      for (int i = 1; i < 4; ++i) {
        const std::string down = "neck.pa_down" + std::to_string(i);
        const std::string out = "neck.pa_out" + std::to_string(i);
        pa_down_w_[i - 1] = store.conv_weight(down + ".weight", K, K, 3, 3);
        pa_down_b_[i - 1] = store.bias(down + ".bias", K);
        pa_out_w_[i - 1] = store.conv_weight(out + ".weight", K, K, 3, 3, g);
        pa_out_b_[i - 1] = store.bias(out + ".bias", K);
      }
    }
    if (cfg.variant == NeckVariant::kPANet) {
      for (int i = 0; i < 4; ++i) {
        const std::string base = "neck.panet_out" + std::to_string(i);
        panet_out_w_[i] = store.conv_weight(base + ".weight", K, K, 3, 3, g);
        panet_out_b_[i] = store.bias(base + ".bias", K);
      }
    }
    if (cfg.variant == NeckVariant::kMHFPN) {
      if (cfg.merge_mode == MergeMode::kConcatConv) {
        head_s_merge_w_ =
            store.conv_weight("neck.head_s.merge.weight", K, 2 * K, 1, 1, g);
        head_s_merge_b_ = store.bias("neck.head_s.merge.bias", K);
        head_l_merge_w_ =
            store.conv_weight("neck.head_l.merge.weight", K, 2 * K, 1, 1, g);
        head_l_merge_b_ = store.bias("neck.head_l.merge.bias", K);
      }
      for (int k = 0; k < 3; ++k) {
        const std::string base = "neck.head_s.conv" + std::to_string(k);
        head_s_conv_w_[k] = store.conv_weight(base + ".weight", K, K, 3, 3, g);
        head_s_conv_b_[k] = store.bias(base + ".bias", K);
      }
      for (int j = 0; j < 2; ++j) {
        const std::string base = "neck.head_l.conv" + std::to_string(j);
        head_l_conv_w_[j] = store.conv_weight(base + ".weight", K, K, 3, 3, g);
        head_l_conv_b_[j] = store.bias(base + ".bias", K);
      }
    }
    if (cfg.variant == NeckVariant::kHRFPN) {
      hr_merge_w_ = store.conv_weight("neck.hr_merge.weight", K, 4 * K, 1, 1, g);
      hr_merge_b_ = store.bias("neck.hr_merge.bias", K);
      for (int k = 0; k < 4; ++k) {
        const std::string base = "neck.hr_conv" + std::to_string(k);
        hr_conv_w_[k] = store.conv_weight(base + ".weight", K, K, 3, 3, g);
        hr_conv_b_[k] = store.bias(base + ".bias", K);
      }
    }
  }

  const NeckConfig& config() const { return cfg_; }

  NeckOutput forward(const PyramidFeatures& features) const {
    switch (cfg_.variant) {
      case NeckVariant::kFPN:
        return fpn_forward(features);
      case NeckVariant::kPANet: {
        PyramidFeatures p = path_aggregate(features);
        NeckOutput out;
        for (int i = 0; i < 4; ++i)
          out.levels[i] = maybe_relu(
              conv2d(p.levels[i], panet_out_w_[i], &panet_out_b_[i], 1, 1));
        return out;
      }
      case NeckVariant::kHRFPN:
        return hrfpn_forward(features);
      case NeckVariant::kMHFPN:
        return mhfpn_emit_outputs(mhfpn_aggregate_heads(path_aggregate(features)));
    }
    throw std::invalid_argument("neck: unknown variant");
  }

  /// 1x1 projection of every level to out_channels.
  PyramidFeatures lateral_project(const PyramidFeatures& f) const {
    PyramidFeatures out;
    for (int i = 0; i < 4; ++i)
      out.levels[i] = conv2d(f.levels[i], lateral_w_[i], &lateral_b_[i], 1, 0);
    return out;
  }

  /// Top-down pathway: start from the projected coarsest level, upsample x2
  /// and add the next-finer lateral, then a 3x3 output conv per level.
  NeckOutput fpn_forward(const PyramidFeatures& f) const {
    PyramidFeatures lat = lateral_project(f);
    std::array<Tensor, 4> merged;
    merged[3] = lat.levels[3];
    for (int i = 2; i >= 0; --i)
      merged[i] = add(lat.levels[i], upsample_bilinear(merged[i + 1], 2));
    NeckOutput out;
    for (int i = 0; i < 4; ++i)
      out.levels[i] =
          maybe_relu(conv2d(merged[i], fpn_out_w_[i], &fpn_out_b_[i], 1, 1));
    return out;
  }

  /// FPN pass followed by a bottom-up pass: stride-2 downsample conv, add,
  /// 3x3 conv (PANet-style).
  PyramidFeatures path_aggregate(const PyramidFeatures& f) const {
    NeckOutput p = fpn_forward(f);
    PyramidFeatures out;
    out.levels[0] = p.levels[0];
    for (int i = 1; i < 4; ++i) {
      Tensor down = conv2d(out.levels[i - 1], pa_down_w_[i - 1],
                           &pa_down_b_[i - 1], 2, 1);
      out.levels[i] = maybe_relu(conv2d(add(down, p.levels[i]),
                                        pa_out_w_[i - 1], &pa_out_b_[i - 1],
                                        1, 1));
    }
    return out;
  }

  /// Small head merges P(fm0) with upsampled P(fm1); large head merges
  /// P(fm2) with upsampled P(fm3). merge_mode sum adds the operands
  /// directly; concat_conv concatenates and projects back to out_channels.
  AggregatedMap mhfpn_aggregate_heads(const PyramidFeatures& p) const {
    AggregatedMap agg;
    Tensor up_s = upsample_bilinear(p.levels[1], 2);
    Tensor up_l = upsample_bilinear(p.levels[3], 2);
    if (cfg_.merge_mode == MergeMode::kSum) {
      agg.small_head = add(p.levels[0], up_s);
      agg.large_head = add(p.levels[2], up_l);
    } else {
      agg.small_head = maybe_relu(conv2d(concat_channels({p.levels[0], up_s}),
                                         head_s_merge_w_, &head_s_merge_b_, 1, 0));
      agg.large_head = maybe_relu(conv2d(concat_channels({p.levels[2], up_l}),
                                         head_l_merge_w_, &head_l_merge_b_, 1, 0));
    }
    return agg;
  }

  /// Small head emits strides 4/8/16 (pool factors 1/2/4 + 3x3 conv), large
  /// head emits strides 16/32 (factors 1/2 + 3x3 conv); the two stride-16
  /// maps fuse by elementwise addition.
  NeckOutput mhfpn_emit_outputs(const AggregatedMap& agg) const {
    std::array<Tensor, 3> s_out;
    for (int k = 0; k < 3; ++k)
      s_out[k] = maybe_relu(conv2d(pool2d(agg.small_head, 1 << k, cfg_.pool_mode),
                                   head_s_conv_w_[k], &head_s_conv_b_[k], 1, 1));
    std::array<Tensor, 2> l_out;
    for (int j = 0; j < 2; ++j)
      l_out[j] = maybe_relu(conv2d(pool2d(agg.large_head, 1 << j, cfg_.pool_mode),
                                   head_l_conv_w_[j], &head_l_conv_b_[j], 1, 1));
    NeckOutput out;
    out.levels[0] = s_out[0];
    out.levels[1] = s_out[1];
    out.levels[2] = add(s_out[2], l_out[0]);
    out.levels[3] = l_out[1];
    return out;
  }

  /// Single-head baseline: upsample all projected levels to stride 4, fuse
  /// once (concat + 1x1 conv), then re-pool to each output scale.
  NeckOutput hrfpn_forward(const PyramidFeatures& f) const {
    PyramidFeatures lat = lateral_project(f);
    std::vector<Tensor> up(4);
    up[0] = lat.levels[0];
    up[1] = upsample_bilinear(lat.levels[1], 2);
    up[2] = upsample_bilinear(lat.levels[2], 4);
    up[3] = upsample_bilinear(upsample_bilinear(lat.levels[3], 4), 2);
    Tensor merged = maybe_relu(
        conv2d(concat_channels(up), hr_merge_w_, &hr_merge_b_, 1, 0));
    NeckOutput out;
    for (int k = 0; k < 4; ++k)
      out.levels[k] = maybe_relu(conv2d(pool2d(merged, 1 << k, cfg_.pool_mode),
                                        hr_conv_w_[k], &hr_conv_b_[k], 1, 1));
    return out;
  }

  // weight handles exposed for construction-style tests
  Tensor& head_s_merge_weight() { return head_s_merge_w_; }
  Tensor& head_l_merge_weight() { return head_l_merge_w_; }

 private:
  Tensor maybe_relu(Tensor t) const {
    return cfg_.relu_after_convs ? relu(t) : t;
  }

  NeckConfig cfg_;
  std::array<Tensor, 4> lateral_w_, lateral_b_;
  std::array<Tensor, 4> fpn_out_w_, fpn_out_b_;
  std::array<Tensor, 3> pa_down_w_, pa_down_b_, pa_out_w_, pa_out_b_;
  std::array<Tensor, 4> panet_out_w_, panet_out_b_;
  Tensor head_s_merge_w_, head_s_merge_b_, head_l_merge_w_, head_l_merge_b_;
  std::array<Tensor, 3> head_s_conv_w_, head_s_conv_b_;
  std::array<Tensor, 2> head_l_conv_w_, head_l_conv_b_;
  Tensor hr_merge_w_, hr_merge_b_;
  std::array<Tensor, 4> hr_conv_w_, hr_conv_b_;
};

}  // namespace neckbench
