#pragma once

// One-stage anchor-free detection head: a shared conv tower per pyramid
// level emitting 1-channel objectness logits and 4-channel (l, t, r, b)
// box regression, plus center-sampling target assignment, the focal+IoU
// training loss, score decoding, and NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "neckbench/boxes.hpp"
#include "neckbench/core.hpp"
#include "neckbench/necks.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/params.hpp"

namespace neckbench {

struct HeadConfig {
  int num_convs = 2;
  double center_radius = 1.5;  // in strides
  double score_threshold = 0.05;
  double nms_iou = 0.5;

  void validate() const {
    if (num_convs < 0)
      throw std::invalid_argument("head: num_convs must be >= 0");
    if (score_threshold < 0.0 || score_threshold > 1.0 || nms_iou < 0.0 ||
        nms_iou > 1.0)
      throw std::invalid_argument("head: thresholds must lie in [0, 1]");
  }
};

struct LevelOutput {
  Tensor cls;  // (B, 1, h, w) logits
  Tensor reg;  // (B, 4, h, w) raw (l, t, r, b); distance = stride * exp(raw)
};

using HeadOutputs = std::array<LevelOutput, 4>;

namespace detail {
// Raw regression values are clamped before exp so a wild training step
// cannot overflow to inf.
constexpr double kRegClamp = 15.0;

inline double decode_distance(double raw, int stride) {
  return stride * std::exp(std::clamp(raw, -kRegClamp, kRegClamp));
}

inline double stable_log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace detail

class Head {
 public:
  Head(ParamStore& store, const HeadConfig& cfg, int in_channels) : cfg_(cfg) {
    cfg.validate();
    for (int i = 0; i < cfg.num_convs; ++i) {
      const std::string base = "head.tower" + std::to_string(i);
      tower_w_.push_back(store.conv_weight(base + ".weight", in_channels,
                                           in_channels, 3, 3,
                                           std::sqrt(2.0)));
      tower_b_.push_back(store.bias(base + ".bias", in_channels));
    }
    cls_w_ = store.conv_weight("head.cls.weight", 1, in_channels, 3, 3);
    // prior-probability bias keeps early epochs from flooding detections
    cls_b_ = store.bias("head.cls.bias", 1, -4.0);
    reg_w_ = store.conv_weight("head.reg.weight", 4, in_channels, 3, 3);
    reg_b_ = store.bias("head.reg.bias", 4);
  }

  HeadOutputs forward(const NeckOutput& neck_out) const {
    HeadOutputs outs;
    for (int lvl = 0; lvl < 4; ++lvl) {
      Tensor x = neck_out.levels[lvl];
      for (std::size_t i = 0; i < tower_w_.size(); ++i)
        x = relu(conv2d(x, tower_w_[i], &tower_b_[i], 1, 1));
      outs[lvl].cls = conv2d(x, cls_w_, &cls_b_, 1, 1);
      outs[lvl].reg = conv2d(x, reg_w_, &reg_b_, 1, 1);
    }
    return outs;
  }

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  std::vector<Tensor> tower_w_, tower_b_;
  Tensor cls_w_, cls_b_, reg_w_, reg_b_;
};

// ---------------------------------------------------------------------------
// Target assignment

/// Scale band per pyramid level, half-open on sqrt(box area):
/// [0,16) -> stride 4, [16,32) -> stride 8, [32,64) -> stride 16,
/// [64,inf) -> stride 32.
inline int level_for_sqrt_area(double sa) {
  if (sa < 16.0) return 0;
  if (sa < 32.0) return 1;
  if (sa < 64.0) return 2;
  return 3;
}

struct LevelTargets {
  int h = 0, w = 0;
  std::vector<std::uint8_t> is_pos;             // h*w
  std::vector<std::array<double, 4>> reg;       // (l,t,r,b) pixels, pos only
};

using ImageTargets = std::array<LevelTargets, 4>;

/// A location (x, y) = (ix*stride, iy*stride) is positive for a gt when it
/// lies strictly inside the box (so all four distances are positive), within
/// center_radius*stride of the gt center, and the gt's scale band matches
/// the level. Contested locations take the smallest-area gt.
inline ImageTargets assign_targets(const std::vector<Box>& gts, int image_h,
                                   int image_w, const HeadConfig& cfg) {
  for (const auto& g : gts) {
    g.validate();
    if (g.x1 < 0 || g.y1 < 0 || g.x2 > image_w || g.y2 > image_h)
      throw std::invalid_argument("assign_targets: gt box outside image bounds");
  }
  ImageTargets targets;
  for (int lvl = 0; lvl < 4; ++lvl) {
    const int stride = PyramidFeatures::strides[lvl];
    LevelTargets& t = targets[lvl];
    t.h = image_h / stride;
    t.w = image_w / stride;
    t.is_pos.assign(static_cast<std::size_t>(t.h) * t.w, 0);
    t.reg.assign(static_cast<std::size_t>(t.h) * t.w, {0, 0, 0, 0});
    std::vector<double> owner_area(static_cast<std::size_t>(t.h) * t.w, 0.0);
    const double radius = cfg.center_radius * stride;
    for (const auto& g : gts) {
      if (level_for_sqrt_area(std::sqrt(g.area())) != lvl) continue;
      for (int iy = 0; iy < t.h; ++iy) {
        const double y = static_cast<double>(iy) * stride;
        for (int ix = 0; ix < t.w; ++ix) {
          const double x = static_cast<double>(ix) * stride;
          const double l = x - g.x1, tt = y - g.y1, r = g.x2 - x, b = g.y2 - y;
          if (l <= 0 || tt <= 0 || r <= 0 || b <= 0) continue;
          if (std::abs(x - g.cx()) > radius || std::abs(y - g.cy()) > radius)
            continue;
          const std::size_t idx = static_cast<std::size_t>(iy) * t.w + ix;
          if (t.is_pos[idx] && owner_area[idx] <= g.area()) continue;
          t.is_pos[idx] = 1;
          owner_area[idx] = g.area();
          t.reg[idx] = {l, tt, r, b};
        }
      }
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Training loss

namespace detail {
inline double detection_loss_walk(const HeadOutputs& outs,
                                  const std::vector<ImageTargets>& targets,
                                  const std::vector<double>& img_weight,
                                  double g, std::array<double*, 4> cls_gr,
                                  std::array<double*, 4> reg_gr);
}  // namespace detail

/// Focal classification loss (gamma=2, alpha=0.25) over all locations plus
/// (1 - IoU) on positives, normalized per image by max(1, positives), then
/// averaged over the batch. Fused op with analytic adjoints for both the
/// logits and the raw regression outputs.
inline Tensor detection_loss(const HeadOutputs& outs,
                             const std::vector<ImageTargets>& targets) {
  const int batch = outs[0].cls.shape().n;
  if (static_cast<int>(targets.size()) != batch)
    throw std::invalid_argument("detection_loss: " +
                                std::to_string(targets.size()) +
                                " target sets for batch of " +
                                std::to_string(batch));
  for (int lvl = 0; lvl < 4; ++lvl) {
    const Shape& cs = outs[lvl].cls.shape();
    const Shape& rs = outs[lvl].reg.shape();
    if (cs.c != 1 || rs.c != 4 || cs.h != rs.h || cs.w != rs.w)
      throw std::invalid_argument("detection_loss: malformed head output at "
                                  "level " + std::to_string(lvl));
    if (cs.h != targets[0][lvl].h || cs.w != targets[0][lvl].w)
      throw std::invalid_argument("detection_loss: target grid " +
                                  std::to_string(targets[0][lvl].h) + "x" +
                                  std::to_string(targets[0][lvl].w) +
                                  " does not match head output " + cs.str() +
                                  " at level " + std::to_string(lvl));
  }

  // Per-image weights 1 / (B * max(1, npos_b)).
  std::vector<double> img_weight(batch);
  for (int b = 0; b < batch; ++b) {
    std::size_t npos = 0;
    for (int lvl = 0; lvl < 4; ++lvl)
      for (auto v : targets[b][lvl].is_pos) npos += v;
    img_weight[b] = 1.0 / (batch * std::max<std::size_t>(1, npos));
  }

  const double value = detail::detection_loss_walk(
      outs, targets, img_weight, 0.0, {nullptr, nullptr, nullptr, nullptr},
      {nullptr, nullptr, nullptr, nullptr});
  Tensor loss = Tensor::scalar(value);

  GradTape* tape = active_tape();
  bool track = false;
  for (int lvl = 0; lvl < 4; ++lvl)
    track = track || outs[lvl].cls.requires_grad() ||
            outs[lvl].reg.requires_grad();
  if (tape && track) {
    loss.enable_grad();
    HeadOutputs captured = outs;
    Tensor tloss = loss;
    tape->record([captured, tloss, targets, img_weight]() mutable {
      const double g = tloss.grad()[0];
      std::array<double*, 4> cls_gr{}, reg_gr{};
      for (int lvl = 0; lvl < 4; ++lvl) {
        cls_gr[lvl] = captured[lvl].cls.requires_grad()
                          ? captured[lvl].cls.grad_ptr()
                          : nullptr;
        reg_gr[lvl] = captured[lvl].reg.requires_grad()
                          ? captured[lvl].reg.grad_ptr()
                          : nullptr;
      }
      detail::detection_loss_walk(captured, targets, img_weight, g, cls_gr,
                                  reg_gr);
    });
  }
  return loss;
}

namespace detail {

/// Shared forward/backward walker: returns the loss and, when grad pointers
/// are non-null, accumulates adjoints scaled by the upstream gradient g.
inline double detection_loss_walk(const HeadOutputs& outs,
                                  const std::vector<ImageTargets>& targets,
                                  const std::vector<double>& img_weight,
                                  double g, std::array<double*, 4> cls_gr,
                                  std::array<double*, 4> reg_gr) {
  constexpr double kGamma = 2.0;
  constexpr double kAlpha = 0.25;
  const int batch = outs[0].cls.shape().n;
  double total = 0.0;
  {
    for (int b = 0; b < batch; ++b) {
      const double wgt = img_weight[b];
      for (int lvl = 0; lvl < 4; ++lvl) {
        const LevelTargets& lt = targets[b][lvl];
        const int stride = PyramidFeatures::strides[lvl];
        const Shape& cs = outs[lvl].cls.shape();
        const std::size_t plane = static_cast<std::size_t>(cs.h) * cs.w;
        const double* cls = outs[lvl].cls.ptr() + b * plane;
        const double* reg = outs[lvl].reg.ptr() + b * 4 * plane;
        double* gcls = cls_gr[lvl] ? cls_gr[lvl] + b * plane : nullptr;
        double* greg = reg_gr[lvl] ? reg_gr[lvl] + b * 4 * plane : nullptr;
        for (std::size_t i = 0; i < plane; ++i) {
          const double z = cls[i];
          const double p = detail::sigmoid(z);
          const double q = 1.0 - p;
          const double logp = detail::stable_log_sigmoid(z);
          const double logq = detail::stable_log_sigmoid(-z);
          if (lt.is_pos[i]) {
            total += wgt * (-kAlpha * q * q * logp);
            if (gcls)
              gcls[i] += g * wgt * kAlpha * q * q * (kGamma * p * logp - q);

            // IoU term on the decoded (l,t,r,b) distances.
            double d[4], dd[4];
            for (int k = 0; k < 4; ++k) {
              d[k] = detail::decode_distance(reg[k * plane + i], stride);
              dd[k] = (std::abs(reg[k * plane + i]) < detail::kRegClamp)
                          ? d[k]   // d(dist)/d(raw) = dist inside the clamp
                          : 0.0;
            }
            const auto& tg = lt.reg[i];
            const double iw = std::min(d[0], tg[0]) + std::min(d[2], tg[2]);
            const double ih = std::min(d[1], tg[1]) + std::min(d[3], tg[3]);
            const double inter = iw * ih;
            const double ap = (d[0] + d[2]) * (d[1] + d[3]);
            const double at = (tg[0] + tg[2]) * (tg[1] + tg[3]);
            const double uni = ap + at - inter;
            const double iou_v = inter / uni;
            total += wgt * (1.0 - iou_v);
            if (greg) {
              for (int k = 0; k < 4; ++k) {
                const bool horizontal = (k == 0 || k == 2);
                const double d_inter =
                    (d[k] < tg[k]) ? (horizontal ? ih : iw) : 0.0;
                const double d_ap = horizontal ? (d[1] + d[3]) : (d[0] + d[2]);
                const double d_uni = d_ap - d_inter;
                const double d_iou =
                    (d_inter * uni - inter * d_uni) / (uni * uni);
                greg[k * plane + i] += g * wgt * (-d_iou) * dd[k];
              }
            }
          } else {
            total += wgt * (-(1.0 - kAlpha) * p * p * logq);
            if (gcls)
              gcls[i] += g * wgt * (1.0 - kAlpha) * p * p *
                         (p - kGamma * q * logq);
          }
        }
      }
    }
  }
  return total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Decoding and NMS

/// Greedy NMS: keep by descending score, suppress boxes with IoU strictly
/// above the threshold against any kept box. Input order is preserved for
/// equal scores.
inline std::vector<Detection> nms(const std::vector<Detection>& dets,
                                  double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t oi : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(dets[oi].box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[oi]);
  }
  return kept;
}

/// Decode one image of a batched head output: sigmoid scores filtered at
/// score_threshold, (l,t,r,b) = stride*exp(raw) around (ix*stride,
/// iy*stride), clipped to the image, then NMS.
inline std::vector<Detection> decode_detections(const HeadOutputs& outs,
                                                int batch_index, int image_h,
                                                int image_w,
                                                const HeadConfig& cfg) {
  std::vector<Detection> raw;
  for (int lvl = 0; lvl < 4; ++lvl) {
    const int stride = PyramidFeatures::strides[lvl];
    const Shape& cs = outs[lvl].cls.shape();
    const std::size_t plane = static_cast<std::size_t>(cs.h) * cs.w;
    const double* cls = outs[lvl].cls.ptr() + batch_index * plane;
    const double* reg = outs[lvl].reg.ptr() +
                        static_cast<std::size_t>(batch_index) * 4 * plane;
    for (int iy = 0; iy < cs.h; ++iy)
      for (int ix = 0; ix < cs.w; ++ix) {
        const std::size_t i = static_cast<std::size_t>(iy) * cs.w + ix;
        const double score = detail::sigmoid(cls[i]);
        if (score < cfg.score_threshold) continue;
        const double x = static_cast<double>(ix) * stride;
        const double y = static_cast<double>(iy) * stride;
        Box b;
        b.x1 = x - detail::decode_distance(reg[0 * plane + i], stride);
        b.y1 = y - detail::decode_distance(reg[1 * plane + i], stride);
        b.x2 = x + detail::decode_distance(reg[2 * plane + i], stride);
        b.y2 = y + detail::decode_distance(reg[3 * plane + i], stride);
        b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image_w));
        b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image_h));
        b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(image_w));
        b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(image_h));
        if (!b.valid()) continue;
        raw.push_back({b, score});
      }
  }
  return nms(raw, cfg.nms_iou);
}

}  // namespace neckbench
