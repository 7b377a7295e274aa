#include <catch2/catch_amalgamated.hpp>

#include "metric_oracles.hpp"
#include "neckbench/metrics.hpp"
#include "neckbench/ops.hpp"

using namespace neckbench;
using oracles::oracle_ap_coco;
using oracles::oracle_ap_exact;
using oracles::oracle_match;
using oracles::OracleOutcome;

namespace {

GroundTruth gt_of(int image, const Box& b) {
  return {image, b, SizeClass::kMedium};
}

}  // namespace

TEST_CASE("iou matches a pixel-counting oracle on a fine grid") {
  // quarter-integer coordinates, 1/8 sampling grid: every edge lies on a
  // cell boundary, so counting cell centers is exact
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    auto coord = [&]() { return 0.25 * static_cast<double>(rng.below(61)); };
    auto make_box = [&]() {
      Box b;
      do {
        double a = coord(), c = coord();
        b.x1 = std::min(a, c), b.x2 = std::max(a, c);
        a = coord(), c = coord();
        b.y1 = std::min(a, c), b.y2 = std::max(a, c);
      } while (!b.valid());
      return b;
    };
    const Box a = make_box(), b = make_box();
    long long inter = 0, uni = 0;
    for (int gy = 0; gy < 16 * 8; ++gy)
      for (int gx = 0; gx < 16 * 8; ++gx) {
        const double x = (gx + 0.5) / 8.0, y = (gy + 0.5) / 8.0;
        const bool ina = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
        const bool inb = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
        inter += ina && inb;
        uni += ina || inb;
      }
    const double grid_iou =
        uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    CHECK(std::abs(iou(a, b) - grid_iou) < 1e-3);
  }
}

TEST_CASE("greedy matching prefers higher scores and higher overlaps") {
  // one gt, two overlapping detections: the higher-scored one claims it
  DetectionSet dets = {{{{0, 0, 10, 10}, 0.6}, {{1, 1, 10, 10}, 0.9}}};
  GroundTruthSet gts = {{gt_of(0, {0, 0, 10, 10})}};
  MatchResult m = match_detections(dets, gts, 0.5);
  REQUIRE(m.ranked.size() == 2);
  CHECK(m.ranked[0].det_index == 1);
  CHECK(m.ranked[0].gt_index == 0);
  CHECK(m.ranked[1].gt_index == -1);

  // one detection, two gts: it takes the higher-IoU one
  DetectionSet d2 = {{{{0, 0, 10, 10}, 0.8}}};
  GroundTruthSet g2 = {{gt_of(0, {0, 0, 12, 12}), gt_of(0, {0, 0, 11, 11})}};
  MatchResult m2 = match_detections(d2, g2, 0.5);
  CHECK(m2.ranked[0].gt_index == 1);  // IoU 100/121 beats 100/144

  CHECK_THROWS_AS(match_detections(DetectionSet(2), GroundTruthSet(1), 0.5),
                  std::invalid_argument);
}

TEST_CASE("matching is strict: IoU equal to the threshold does not match") {
  DetectionSet dets = {{{{0, 0, 1, 1}, 0.9}}};
  GroundTruthSet gts = {{gt_of(0, {0, 0, 2, 2})}};  // IoU exactly 0.25
  CHECK(match_detections(dets, gts, 0.25).ranked[0].gt_index == -1);
  CHECK(match_detections(dets, gts, 0.2499).ranked[0].gt_index == 0);
}

TEST_CASE("score ties rank by image then box coordinates") {
  DetectionSet dets(2);
  dets[1].push_back({{5, 5, 9, 9}, 0.7});
  dets[0].push_back({{3, 3, 7, 7}, 0.7});
  dets[0].push_back({{1, 1, 5, 5}, 0.7});
  GroundTruthSet gts(2);
  MatchResult m = match_detections(dets, gts, 0.5);
  REQUIRE(m.ranked.size() == 3);
  CHECK(m.ranked[0].image == 0);
  CHECK(m.ranked[0].det_index == 1);  // x1=1 sorts before x1=3
  CHECK(m.ranked[1].image == 0);
  CHECK(m.ranked[2].image == 1);
}

TEST_CASE("average precision on the TP,FP,TP textbook ranking") {
  // two images so the ranking interleaves; scores force [TP, FP, TP]
  DetectionSet dets = {{{{0, 0, 8, 8}, 0.9}, {{20, 20, 28, 28}, 0.7}},
                       {{{0, 0, 8, 8}, 0.8}}};
  GroundTruthSet gts = {{gt_of(0, {0, 0, 8, 8}), gt_of(0, {20, 20, 27, 28})},
                        {}};
  // rank 1: score .9 matches gt0. rank 2: score .8, image 1, no gts -> FP.
  // rank 3: score .7 matches gt1 (IoU 7/8 = 0.875).
  MatchResult m = match_detections(dets, gts, 0.5);
  REQUIRE(m.ranked.size() == 3);
  CHECK(m.ranked[0].gt_index >= 0);
  CHECK(m.ranked[1].gt_index == -1);
  CHECK(m.ranked[2].gt_index >= 0);
  ApResult ap = average_precision(m);
  REQUIRE(ap.exact);
  REQUIRE(ap.coco101);
  CHECK(*ap.exact == Catch::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(*ap.coco101 ==
        Catch::Approx((51.0 + 50.0 * (2.0 / 3.0)) / 101.0).epsilon(1e-12));
}

TEST_CASE("implementation agrees with the selection-based oracle exactly") {
  SplitMix64 rng(777);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_images = 1 + static_cast<int>(rng.below(3));
    DetectionSet dets(n_images);
    GroundTruthSet gts(n_images);
    // small coordinate lattice and score palette force frequent ties
    const double scores[4] = {0.3, 0.5, 0.5, 0.9};
    for (int i = 0; i < n_images; ++i) {
      const int nd = static_cast<int>(rng.below(5));
      for (int k = 0; k < nd; ++k) {
        Box b;
        b.x1 = static_cast<double>(rng.below(6));
        b.y1 = static_cast<double>(rng.below(6));
        b.x2 = b.x1 + 1.0 + static_cast<double>(rng.below(5));
        b.y2 = b.y1 + 1.0 + static_cast<double>(rng.below(5));
        dets[i].push_back({b, scores[rng.below(4)]});
      }
      const int ng = static_cast<int>(rng.below(4));
      for (int g = 0; g < ng; ++g) {
        Box b;
        b.x1 = static_cast<double>(rng.below(6));
        b.y1 = static_cast<double>(rng.below(6));
        b.x2 = b.x1 + 1.0 + static_cast<double>(rng.below(5));
        b.y2 = b.y1 + 1.0 + static_cast<double>(rng.below(5));
        gts[i].push_back(gt_of(i, b));
      }
    }
    const double thr = trial % 2 ? 0.5 : 0.25;
    MatchResult m = match_detections(dets, gts, thr);
    OracleOutcome oracle = oracle_match(dets, gts, thr);
    REQUIRE(m.ranked.size() == oracle.tp.size());
    for (std::size_t i = 0; i < oracle.tp.size(); ++i) {
      INFO("trial " << trial << " rank " << i);
      CHECK((m.ranked[i].gt_index >= 0 ? 1 : 0) == oracle.tp[i]);
    }
    if (oracle.num_gt > 0) {
      ApResult ap = average_precision(m);
      REQUIRE(ap.exact);
      CHECK(*ap.exact == oracle_ap_exact(oracle.tp, oracle.num_gt));
      CHECK(*ap.coco101 == oracle_ap_coco(oracle.tp, oracle.num_gt));
      CHECK(*tpr_of(m) == static_cast<double>(oracle.matched_gt) /
                              static_cast<double>(oracle.num_gt));
    } else {
      CHECK_FALSE(average_precision(m).coco101.has_value());
      CHECK_FALSE(tpr_of(m).has_value());
    }
    CHECK(fppi_of(m, n_images) ==
          static_cast<double>(oracle.false_pos) / n_images);
  }
}

TEST_CASE("tpr and fppi count plainly") {
  DetectionSet dets = {{{{0, 0, 8, 8}, 0.9}, {{30, 30, 34, 34}, 0.4}},
                       {{{4, 4, 8, 8}, 0.8}}};  // IoU 0.25 with its gt: a miss
  GroundTruthSet gts = {{gt_of(0, {0, 0, 8, 8}), gt_of(0, {10, 10, 18, 18})},
                        {gt_of(1, {0, 0, 8, 8})}};
  MatchResult m = match_detections(dets, gts, 0.5);
  CHECK(*tpr_of(m) == Catch::Approx(1.0 / 3.0));  // only the exact hit at .9
  CHECK(fppi_of(m, 2) == 1.0);                    // 2 false positives, 2 images
  CHECK_THROWS_AS(fppi_of(m, 0), std::invalid_argument);
}

TEST_CASE("froc sweeps high to low and is monotone along the way") {
  SplitMix64 rng(31337);
  DetectionSet dets(4);
  GroundTruthSet gts(4);
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 6; ++k) {
      Box b;
      b.x1 = rng.uniform(0.0, 40.0);
      b.y1 = rng.uniform(0.0, 40.0);
      b.x2 = b.x1 + rng.uniform(2.0, 20.0);
      b.y2 = b.y1 + rng.uniform(2.0, 20.0);
      dets[i].push_back({b, rng.uniform()});
    }
    for (int g = 0; g < 2; ++g) {
      Box b;
      b.x1 = rng.uniform(0.0, 40.0);
      b.y1 = rng.uniform(0.0, 40.0);
      b.x2 = b.x1 + rng.uniform(2.0, 20.0);
      b.y2 = b.y1 + rng.uniform(2.0, 20.0);
      gts[i].push_back(gt_of(i, b));
    }
  }
  FrocCurve curve = froc(dets, gts, 0.2, {0.1, 0.9, 0.5, 0.3, 0.7});
  REQUIRE(curve.points.size() == 5);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].threshold < curve.points[i - 1].threshold);
    CHECK(curve.points[i].fppi >= curve.points[i - 1].fppi);
    CHECK(curve.points[i].tpr >= curve.points[i - 1].tpr);
  }
}

TEST_CASE("size classes scale the reference areas with image side") {
  // at side 800 the raw thresholds apply
  CHECK(size_class_for_area(1023.9, 800) == SizeClass::kSmall);
  CHECK(size_class_for_area(1024.0, 800) == SizeClass::kMedium);
  CHECK(size_class_for_area(9216.0, 800) == SizeClass::kLarge);
  // at side 64 they shrink by (64/800)^2: 81.92 and 737.28
  CHECK(size_class_for_area(81.0, 64) == SizeClass::kSmall);
  CHECK(size_class_for_area(82.0, 64) == SizeClass::kMedium);
  CHECK(size_class_for_area(737.0, 64) == SizeClass::kMedium);
  CHECK(size_class_for_area(738.0, 64) == SizeClass::kLarge);
  CHECK(make_ground_truth(0, {0, 0, 9, 9}, 64).size_class == SizeClass::kSmall);
}

TEST_CASE("size-bucketed AP drops cross-bucket matches instead of faulting them") {
  GroundTruthSet gts(1);
  gts[0].push_back({0, {0, 0, 8, 8}, SizeClass::kSmall});
  gts[0].push_back({0, {20, 20, 50, 50}, SizeClass::kLarge});
  DetectionSet dets = {{{{0, 0, 8, 8}, 0.9}, {{20, 20, 50, 50}, 0.8}}};
  ApResult small = size_bucketed_ap(dets, gts, 0.5, SizeClass::kSmall);
  ApResult large = size_bucketed_ap(dets, gts, 0.5, SizeClass::kLarge);
  REQUIRE(small.exact);
  REQUIRE(large.exact);
  CHECK(*small.exact == 1.0);  // the large-matched det is not a small FP
  CHECK(*large.exact == 1.0);
  CHECK_FALSE(
      size_bucketed_ap(dets, gts, 0.5, SizeClass::kMedium).exact.has_value());

  // a genuinely unmatched detection still hurts every bucket
  dets[0].push_back({{40, 0, 44, 4}, 0.95});
  ApResult small2 = size_bucketed_ap(dets, gts, 0.5, SizeClass::kSmall);
  CHECK(*small2.exact < 1.0);
}

TEST_CASE("report rows carry dash markers for undefined metrics") {
  DetectionSet dets = {{{{0, 0, 8, 8}, 0.9}}};
  GroundTruthSet gts = {{}};  // no ground truths at all
  MetricsReport rep = compute_report(dets, gts, {0.2, 0.5, 0.75}, {0.5});
  CHECK_FALSE(rep.ap.at(50).has_value());
  CHECK_FALSE(rep.tpr.at(20).has_value());
  CHECK(rep.fppi == 1.0);
  const std::string row = report_csv_row("fpn", rep);
  CHECK(row == "fpn,-,-,-,-,-,-,1.000000,0,0");
  CHECK(std::string(kReportCsvHeader) ==
        "variant,AP@50,AP@75,AP@50S,AP@50L,TPR@50,TPR@20,FPPI,Params,FLOPs");
}

TEST_CASE("report csv row formats defined metrics to six decimals") {
  GroundTruthSet gts = {{gt_of(0, {0, 0, 8, 8})}};
  DetectionSet dets = {{{{0, 0, 8, 8}, 0.9}}};
  MetricsReport rep = compute_report(dets, gts, {0.2, 0.5, 0.75}, {0.5});
  rep.params = 224;
  rep.flops = 7040;
  CHECK(report_csv_row("mhfpn", rep) ==
        "mhfpn,1.000000,1.000000,-,-,1.000000,1.000000,0.000000,224,7040");
  const std::string fc = froc_csv(rep.froc);
  CHECK(fc == "threshold,fppi,tpr\n0.500000,0.000000,1.000000\n");
}

TEST_CASE("flop accounting: the 3->8 conv reference fixture") {
  ParamStore store(0);
  Tensor w = store.conv_weight("fix.weight", 8, 3, 3, 3);
  Tensor b = store.bias("fix.bias", 8);
  CHECK(count_params(store) == 224);  // 8*3*3*3 + 8
  Tensor x = Tensor::full({1, 3, 4, 4}, 1.0);
  const long long flops = count_flops([&] { conv2d(x, w, &b, 1, 1); });
  // 128 output elements * (2 * 27 MACs) + 128 bias adds
  CHECK(flops == 7040);
  // pooling counts one op per output element
  CHECK(count_flops([&] { pool2d(x, 2, PoolMode::kMax); }) == 3 * 2 * 2);
  // concat is free bookkeeping
  CHECK(count_flops([&] { concat_channels({x, x}); }) == 0);
}
