#pragma once

// Detection evaluation: IoU matching, AP (COCO 101-point and exact
// envelope), TPR / FPPI, FROC curves, size-bucketed AP, and model cost
// accounting. All functions are pure; matching order is made deterministic
// by a stable global sort (score desc, then image, then box coordinates).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "neckbench/boxes.hpp"
#include "neckbench/core.hpp"
#include "neckbench/params.hpp"

namespace neckbench {

enum class SizeClass { kSmall, kMedium, kLarge };

/// COCO pixel-area bucket thresholds (32^2, 96^2) scaled linearly by
/// image_side / 800 so small images keep meaningful buckets.
inline SizeClass size_class_for_area(double area, int image_side) {
  const double scale = image_side / 800.0;
  if (area < 1024.0 * scale) return SizeClass::kSmall;
  if (area < 9216.0 * scale) return SizeClass::kMedium;
  return SizeClass::kLarge;
}

struct GroundTruth {
  int image_id = 0;
  Box box;
  SizeClass size_class = SizeClass::kMedium;
};

inline GroundTruth make_ground_truth(int image_id, const Box& box,
                                     int image_side) {
  box.validate();
  return {image_id, box, size_class_for_area(box.area(), image_side)};
}

// [image][k]; the outer index is the image, ids inside GroundTruth are
// carried along for provenance only.
using DetectionSet = std::vector<std::vector<Detection>>;
using GroundTruthSet = std::vector<std::vector<GroundTruth>>;

// ---------------------------------------------------------------------------
// Matching

struct RankedMatch {
  int image = 0;      // outer index into the detection set
  int det_index = 0;  // index within that image's list
  double score = 0.0;
  int gt_index = -1;  // matched gt within the image, -1 for false positive
};

struct MatchResult {
  std::vector<RankedMatch> ranked;  // global descending-score order
  std::vector<std::vector<std::uint8_t>> gt_matched;  // [image][gt]
  std::size_t num_gt = 0;
};

/// Greedy matcher: walk detections in descending score order; each claims
/// the highest-IoU still-unmatched ground truth of its image, provided the
/// IoU is strictly above iou_thr. Everything else is a false positive.
inline MatchResult match_detections(const DetectionSet& dets,
                                    const GroundTruthSet& gts,
                                    double iou_thr) {
  if (dets.size() != gts.size())
    throw std::invalid_argument(
        "match_detections: " + std::to_string(dets.size()) +
        " detection lists vs " + std::to_string(gts.size()) + " gt lists");
  MatchResult res;
  res.gt_matched.resize(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    res.gt_matched[i].assign(gts[i].size(), 0);
    res.num_gt += gts[i].size();
  }
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t k = 0; k < dets[i].size(); ++k)
      res.ranked.push_back({static_cast<int>(i), static_cast<int>(k),
                            dets[i][k].score, -1});
  std::stable_sort(res.ranked.begin(), res.ranked.end(),
                   [&](const RankedMatch& a, const RankedMatch& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.image != b.image) return a.image < b.image;
                     const Box& ba = dets[a.image][a.det_index].box;
                     const Box& bb = dets[b.image][b.det_index].box;
                     if (ba.x1 != bb.x1) return ba.x1 < bb.x1;
                     if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
                     if (ba.x2 != bb.x2) return ba.x2 < bb.x2;
                     return ba.y2 < bb.y2;
                   });
  for (auto& r : res.ranked) {
    const Box& db = dets[r.image][r.det_index].box;
    const auto& img_gts = gts[r.image];
    double best = iou_thr;  // strict: must exceed the threshold
    int best_gt = -1;
    for (std::size_t g = 0; g < img_gts.size(); ++g) {
      if (res.gt_matched[r.image][g]) continue;
      const double v = iou(db, img_gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      r.gt_index = best_gt;
      res.gt_matched[r.image][best_gt] = 1;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Average precision

namespace detail {

/// Envelope precision per rank: env[i] = max precision at rank >= i.
inline std::vector<double> precision_envelope(
    const std::vector<std::uint8_t>& tp) {
  std::vector<double> env(tp.size());
  std::size_t cum_tp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    env[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = tp.size(); i-- > 1;)
    env[i - 1] = std::max(env[i - 1], env[i]);
  return env;
}

/// Exact area under the envelope-interpolated PR curve.
inline double ap_exact(const std::vector<std::uint8_t>& tp,
                       std::size_t num_gt) {
  const std::vector<double> env = precision_envelope(tp);
  double ap = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i)
    if (tp[i]) ap += env[i] / static_cast<double>(num_gt);
  return ap;
}

/// COCO-style 101-point sampling of the same envelope.
inline double ap_coco101(const std::vector<std::uint8_t>& tp,
                         std::size_t num_gt) {
  const std::vector<double> env = precision_envelope(tp);
  std::vector<double> recall(tp.size());
  std::size_t cum_tp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    recall[i] = static_cast<double>(cum_tp) / static_cast<double>(num_gt);
  }
  double sum = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double r = s / 100.0;
    // first rank reaching recall >= r; envelope there is the max beyond it
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += env[it - recall.begin()];
  }
  return sum / 101.0;
}

}  // namespace detail

struct ApResult {
  std::optional<double> coco101;  // reported value
  std::optional<double> exact;    // exact envelope area, kept for checks
};

/// AP over the globally-ranked match list. No ground truths -> undefined.
inline ApResult average_precision(const MatchResult& m) {
  if (m.num_gt == 0) return {};
  std::vector<std::uint8_t> tp(m.ranked.size());
  for (std::size_t i = 0; i < m.ranked.size(); ++i)
    tp[i] = m.ranked[i].gt_index >= 0 ? 1 : 0;
  return {detail::ap_coco101(tp, m.num_gt), detail::ap_exact(tp, m.num_gt)};
}

/// AP with ground truths restricted to one size bucket. Detections matched
/// to an out-of-bucket gt are dropped from the ranking (not false
/// positives); unmatched detections still count as false positives.
inline ApResult size_bucketed_ap(const DetectionSet& dets,
                                 const GroundTruthSet& gts, double iou_thr,
                                 SizeClass bucket) {
  const MatchResult m = match_detections(dets, gts, iou_thr);
  std::size_t bucket_gt = 0;
  for (const auto& img : gts)
    for (const auto& g : img) bucket_gt += g.size_class == bucket ? 1 : 0;
  if (bucket_gt == 0) return {};
  std::vector<std::uint8_t> tp;
  tp.reserve(m.ranked.size());
  for (const auto& r : m.ranked) {
    if (r.gt_index < 0) {
      tp.push_back(0);
    } else if (gts[r.image][r.gt_index].size_class == bucket) {
      tp.push_back(1);
    }  // matched outside the bucket: excluded entirely
  }
  return {detail::ap_coco101(tp, bucket_gt),
          detail::ap_exact(tp, bucket_gt)};
}

// ---------------------------------------------------------------------------
// TPR / FPPI / FROC

/// Matched gts / total gts; undefined when there are no ground truths.
inline std::optional<double> tpr_of(const MatchResult& m) {
  if (m.num_gt == 0) return std::nullopt;
  std::size_t matched = 0;
  for (const auto& img : m.gt_matched)
    for (auto v : img) matched += v;
  return static_cast<double>(matched) / static_cast<double>(m.num_gt);
}

/// Unmatched detections per image.
inline double fppi_of(const MatchResult& m, std::size_t num_images) {
  if (num_images == 0)
    throw std::invalid_argument("fppi_of: need at least one image");
  std::size_t fp = 0;
  for (const auto& r : m.ranked) fp += r.gt_index < 0 ? 1 : 0;
  return static_cast<double>(fp) / static_cast<double>(num_images);
}

struct FrocPoint {
  double threshold = 0.0;
  double fppi = 0.0;
  double tpr = 0.0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // sweep order: threshold high -> low
};

/// One (fppi, tpr) point per score threshold, keeping only detections with
/// score >= threshold. Sweeping downward can only add detections, so both
/// coordinates are non-decreasing along the curve.
inline FrocCurve froc(const DetectionSet& dets, const GroundTruthSet& gts,
                      double iou_thr, std::vector<double> thresholds) {
  std::sort(thresholds.begin(), thresholds.end(),
            [](double a, double b) { return a > b; });
  FrocCurve curve;
  for (double t : thresholds) {
    DetectionSet kept(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (const auto& d : dets[i])
        if (d.score >= t) kept[i].push_back(d);
    const MatchResult m = match_detections(kept, gts, iou_thr);
    const auto tpr = tpr_of(m);
    curve.points.push_back({t, fppi_of(m, dets.size()), tpr.value_or(0.0)});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  // keys are IoU thresholds in percent (50 meaning IoU > 0.50)
  std::map<int, std::optional<double>> ap;
  std::map<int, std::optional<double>> ap_small, ap_large;
  std::map<int, std::optional<double>> tpr;
  double fppi = 0.0;  // at the 50 matching
  FrocCurve froc;
  long long params = 0;
  long long flops = 0;
};

/// Full report over one evaluation split: AP and TPR at every configured
/// IoU threshold; size buckets, FPPI, and the FROC curve at the 0.50
/// matching. Cost fields are left zero for the caller to fill in.
inline MetricsReport compute_report(const DetectionSet& dets,
                                    const GroundTruthSet& gts,
                                    const std::vector<double>& iou_thresholds,
                                    const std::vector<double>& froc_thresholds) {
  MetricsReport rep;
  for (double t : iou_thresholds) {
    const int key = static_cast<int>(std::lround(t * 100.0));
    const MatchResult m = match_detections(dets, gts, t);
    rep.ap[key] = average_precision(m).coco101;
    rep.tpr[key] = tpr_of(m);
  }
  rep.ap_small[50] = size_bucketed_ap(dets, gts, 0.50, SizeClass::kSmall).coco101;
  rep.ap_large[50] = size_bucketed_ap(dets, gts, 0.50, SizeClass::kLarge).coco101;
  rep.fppi = fppi_of(match_detections(dets, gts, 0.50), dets.size());
  rep.froc = froc(dets, gts, 0.50, froc_thresholds);
  return rep;
}

// ---------------------------------------------------------------------------
// Cost accounting

inline long long count_params(const ParamStore& store) {
  return static_cast<long long>(store.count_params());
}

/// FLOPs of whatever the callable runs, under this library's convention:
/// conv = 2 * MACs + bias adds; pooling / upsampling / elementwise ops
/// count one per output element.
template <typename F>
long long count_flops(F&& forward) {
  FlopCounter counter;
  {
    FlopScope scope(counter);
    forward();
  }
  return counter.flops;
}

// ---------------------------------------------------------------------------
// CSV formatting

namespace detail {

inline std::string fmt_f(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, int prec = 6) {
  return v ? fmt_f(*v, prec) : std::string("-");
}

inline std::optional<double> opt_metric(
    const std::map<int, std::optional<double>>& m, int key) {
  const auto it = m.find(key);
  return it == m.end() ? std::nullopt : it->second;
}

}  // namespace detail

inline const char* kReportCsvHeader =
    "variant,AP@50,AP@75,AP@50S,AP@50L,TPR@50,TPR@20,FPPI,Params,FLOPs";

inline std::string report_csv_row(const std::string& variant,
                                  const MetricsReport& rep) {
  using detail::fmt_f;
  using detail::fmt_opt;
  std::string row = variant;
  row += "," + fmt_opt(detail::opt_metric(rep.ap, 50));
  row += "," + fmt_opt(detail::opt_metric(rep.ap, 75));
  row += "," + fmt_opt(detail::opt_metric(rep.ap_small, 50));
  row += "," + fmt_opt(detail::opt_metric(rep.ap_large, 50));
  row += "," + fmt_opt(detail::opt_metric(rep.tpr, 50));
  row += "," + fmt_opt(detail::opt_metric(rep.tpr, 20));
  row += "," + fmt_f(rep.fppi);
  row += "," + std::to_string(rep.params);
  row += "," + std::to_string(rep.flops);
  return row;
}

inline const char* kFrocCsvHeader = "threshold,fppi,tpr";

inline std::string froc_csv(const FrocCurve& curve) {
  std::string out = kFrocCsvHeader;
  out += "\n";
  for (const auto& p : curve.points) {
    out += detail::fmt_f(p.threshold) + "," + detail::fmt_f(p.fppi) + "," +
           detail::fmt_f(p.tpr) + "\n";
  }
  return out;
}

}  // namespace neckbench
