#pragma once

// Independent re-implementations of matching and AP used as oracles by the
// unit tests and the acceptance gate: no sorting (repeated global-max
// selection) and no envelope array (direct max scans). Mechanically
// different from the library, semantically the same contract.

#include <cstdint>
#include <utility>
#include <vector>

#include "neckbench/metrics.hpp"

namespace oracles {

using neckbench::Box;
using neckbench::Detection;
using neckbench::DetectionSet;
using neckbench::GroundTruthSet;
using neckbench::SizeClass;

struct OraclePick {
  int image = 0;
  int det = 0;
  int gt = -1;  // -1 when unmatched
};

struct OracleOutcome {
  std::vector<std::uint8_t> tp;    // descending-score flags
  std::vector<OraclePick> picks;   // same order as tp
  std::size_t num_gt = 0;
  std::size_t matched_gt = 0;
  std::size_t false_pos = 0;
};

inline OracleOutcome oracle_match(const DetectionSet& dets,
                                  const GroundTruthSet& gts, double thr) {
  OracleOutcome out;
  std::vector<std::vector<std::uint8_t>> taken(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    taken[i].assign(gts[i].size(), 0);
    out.num_gt += gts[i].size();
  }
  std::vector<std::pair<int, int>> left;
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t k = 0; k < dets[i].size(); ++k)
      left.push_back({static_cast<int>(i), static_cast<int>(k)});
  auto precedes = [&](std::pair<int, int> a, std::pair<int, int> b) {
    const Detection& da = dets[a.first][a.second];
    const Detection& db = dets[b.first][b.second];
    if (da.score != db.score) return da.score > db.score;
    if (a.first != b.first) return a.first < b.first;
    if (da.box.x1 != db.box.x1) return da.box.x1 < db.box.x1;
    if (da.box.y1 != db.box.y1) return da.box.y1 < db.box.y1;
    if (da.box.x2 != db.box.x2) return da.box.x2 < db.box.x2;
    if (da.box.y2 != db.box.y2) return da.box.y2 < db.box.y2;
    return a.second < b.second;  // stable: original order breaks exact ties
  };
  while (!left.empty()) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < left.size(); ++i)
      if (precedes(left[i], left[pick])) pick = i;
    const auto [img, k] = left[pick];
    left.erase(left.begin() + pick);
    int best_g = -1;
    double best_iou = thr;
    for (std::size_t g = 0; g < gts[img].size(); ++g) {
      if (taken[img][g]) continue;
      const double v = iou(dets[img][k].box, gts[img][g].box);
      if (v > best_iou) {
        best_iou = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      taken[img][best_g] = 1;
      out.matched_gt++;
      out.tp.push_back(1);
    } else {
      out.false_pos++;
      out.tp.push_back(0);
    }
    out.picks.push_back({img, k, best_g});
  }
  return out;
}

inline double oracle_ap_exact(const std::vector<std::uint8_t>& tp,
                              std::size_t num_gt) {
  double ap = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (!tp[i]) continue;
    std::size_t cum = 0;
    double best = 0.0;
    for (std::size_t j = 0; j < tp.size(); ++j) {
      cum += tp[j];
      if (j >= i) best = std::max(best, static_cast<double>(cum) / (j + 1));
    }
    ap += best / static_cast<double>(num_gt);
  }
  return ap;
}

inline double oracle_ap_coco(const std::vector<std::uint8_t>& tp,
                             std::size_t num_gt) {
  double sum = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double r = s / 100.0;
    std::size_t cum = 0;
    double best = 0.0;
    bool reached = false;
    for (std::size_t j = 0; j < tp.size(); ++j) {
      cum += tp[j];
      if (static_cast<double>(cum) / num_gt >= r) {
        reached = true;
        best = std::max(best, static_cast<double>(cum) / (j + 1));
      }
    }
    if (reached) sum += best;
  }
  return sum / 101.0;
}

/// Flags restricted to one size bucket: in-bucket matches count, unmatched
/// detections stay false positives, out-of-bucket matches vanish from the
/// ranking. Returns the filtered flags plus the in-bucket gt count.
inline std::pair<std::vector<std::uint8_t>, std::size_t> oracle_bucket_tp(
    const OracleOutcome& out, const GroundTruthSet& gts, SizeClass bucket) {
  std::size_t bucket_gt = 0;
  for (const auto& img : gts)
    for (const auto& g : img) bucket_gt += g.size_class == bucket ? 1 : 0;
  std::vector<std::uint8_t> tp;
  for (const auto& p : out.picks) {
    if (p.gt < 0)
      tp.push_back(0);
    else if (gts[p.image][p.gt].size_class == bucket)
      tp.push_back(1);
  }
  return {tp, bucket_gt};
}

/// Rasterized IoU: exact for boxes on a quarter-integer grid because every
/// edge then lies on a 1/8-pitch cell boundary.
inline double grid_iou(const Box& a, const Box& b, int span) {
  long long inter = 0, uni = 0;
  for (int gy = 0; gy < span * 8; ++gy)
    for (int gx = 0; gx < span * 8; ++gx) {
      const double x = (gx + 0.5) / 8.0, y = (gy + 0.5) / 8.0;
      const bool ina = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool inb = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += ina && inb;
      uni += ina || inb;
    }
  return uni == 0 ? 0.0
                  : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace oracles
