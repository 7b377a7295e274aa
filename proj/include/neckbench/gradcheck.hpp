#pragma once

// Finite-difference verification suite: every differentiable op, the
// detection loss, all four neck variants, and one composed detector, each
// probed at several seeded random points. This is the oracle behind the
// `gradcheck` command; tests reuse it directly.

#include <functional>
#include <string>
#include <vector>

#include "neckbench/config.hpp"
#include "neckbench/head.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/train.hpp"

namespace neckbench {

struct GradCheckEntry {
  std::string component;
  double worst_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;
  double eps = 1e-5;
  bool all_pass = false;

  std::string text() const {
    std::string out;
    for (const auto& e : entries) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-22s max_rel_err=%.3e  %s\n",
                    e.component.c_str(), e.worst_rel_err,
                    e.pass ? "PASS" : "FAIL");
      out += buf;
    }
    out += all_pass ? "gradcheck: all components pass\n"
                    : "gradcheck: FAILURES present\n";
    return out;
  }
};

namespace detail {

inline Tensor randn_t(Shape s, SplitMix64& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(s);
  for (auto& v : t.data()) v = scale * rng.gaussian();
  return t;
}

/// Sums a tensor of any shape to a scalar via the tracked sum op.
inline Tensor total_of(const std::vector<Tensor>& parts) {
  Tensor acc = sum(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, sum(parts[i]));
  return acc;
}

}  // namespace detail

/// Runs one component: `make_f` builds the scalar function for a given
/// point index (so fixtures can vary), `make_point` supplies the point.
inline GradCheckEntry gradcheck_component(
    const std::string& name, int points, std::uint64_t seed, double eps,
    double tol,
    const std::function<std::function<Tensor(const Tensor&)>(int, SplitMix64&)>&
        make_f,
    const std::function<Tensor(int, SplitMix64&)>& make_point) {
  GradCheckEntry entry{name, 0.0, false};
  for (int p = 0; p < points; ++p) {
    SplitMix64 rng(derive_seed(seed, name + ".point." + std::to_string(p)));
    auto f = make_f(p, rng);
    const Tensor point = make_point(p, rng);
    const double err = finite_diff_check(f, point, eps);
    entry.worst_rel_err = std::max(entry.worst_rel_err, err);
  }
  entry.pass = entry.worst_rel_err < tol;
  return entry;
}

inline GradCheckReport run_gradcheck(std::uint64_t seed = 424242) {
  GradCheckReport report;
  const double eps = report.eps;
  const double tol = report.tolerance;
  auto run = [&](const std::string& name, int points, auto make_f,
                 auto make_point) {
    report.entries.push_back(
        gradcheck_component(name, points, seed, eps, tol, make_f, make_point));
  };
  using detail::randn_t;
  using detail::total_of;

  // -- conv2d: input, weight, bias paths; stride/padding alternate --------
  run("conv2d.input", 10,
      [](int p, SplitMix64& rng) {
        const Tensor w = randn_t({4, 3, 3, 3}, rng, 0.5);
        const Tensor b = randn_t({1, 4, 1, 1}, rng, 0.1);
        const int stride = p % 2 ? 2 : 1;
        return std::function<Tensor(const Tensor&)>(
            [w, b, stride](const Tensor& x) {
              return sum(conv2d(x, w, &b, stride, 1));
            });
      },
      [](int, SplitMix64& rng) { return randn_t({2, 3, 6, 6}, rng); });
  run("conv2d.weight", 10,
      [](int, SplitMix64& rng) {
        const Tensor x = randn_t({1, 3, 5, 5}, rng);
        const Tensor b = randn_t({1, 4, 1, 1}, rng, 0.1);
        return std::function<Tensor(const Tensor&)>(
            [x, b](const Tensor& w) { return sum(conv2d(x, w, &b, 1, 1)); });
      },
      [](int, SplitMix64& rng) { return randn_t({4, 3, 3, 3}, rng, 0.5); });
  run("conv2d.bias", 10,
      [](int, SplitMix64& rng) {
        const Tensor x = randn_t({1, 3, 5, 5}, rng);
        const Tensor w = randn_t({4, 3, 3, 3}, rng, 0.5);
        return std::function<Tensor(const Tensor&)>(
            [x, w](const Tensor& b) { return sum(conv2d(x, w, &b, 1, 1)); });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 4, 1, 1}, rng, 0.1); });

  // -- pooling / resampling ----------------------------------------------
  run("pool2d.max", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>(
            [](const Tensor& x) { return sum(pool2d(x, 2, PoolMode::kMax)); });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 2, 8, 8}, rng); });
  run("pool2d.avg", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>(
            [](const Tensor& x) { return sum(pool2d(x, 4, PoolMode::kAvg)); });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 2, 8, 8}, rng); });
  run("upsample.bilinear", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>([](const Tensor& x) {
          return sum(relu(upsample_bilinear(x, 2)));
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 2, 4, 4}, rng); });
  run("resize.bilinear", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>([](const Tensor& x) {
          return sum(relu(resize_bilinear(x, 8, 6)));
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 2, 5, 7}, rng); });

  // -- elementwise and shape ops -----------------------------------------
  run("relu", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>(
            [](const Tensor& x) { return sum(relu(x)); });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 3, 5, 5}, rng); });
  run("add.scale", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>([](const Tensor& x) {
          return sum(relu(add(scale(x, 1.7), x)));
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 3, 4, 4}, rng); });
  run("concat.slice", 10,
      [](int, SplitMix64&) {
        return std::function<Tensor(const Tensor&)>([](const Tensor& x) {
          const Tensor c = concat_channels({x, scale(x, 0.5)});
          return sum(relu(slice_channels(c, 1, 4)));
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 3, 4, 4}, rng); });

  // -- detection loss -----------------------------------------------------
  const auto loss_fixture = [](SplitMix64& rng) {
    struct Fixture {
      HeadOutputs outs;
      std::vector<ImageTargets> targets;
    };
    Fixture fx;
    const std::vector<Box> gts = {{3.0, 4.0, 8.0, 9.0},
                                  {6.0, 2.0, 30.0, 26.0}};
    HeadConfig hc;
    fx.targets = {assign_targets(gts, 32, 32, hc)};
    const int hw[4] = {8, 4, 2, 1};
    for (int lvl = 0; lvl < 4; ++lvl) {
      fx.outs[lvl].cls = detail::randn_t({1, 1, hw[lvl], hw[lvl]}, rng);
      fx.outs[lvl].reg = detail::randn_t({1, 4, hw[lvl], hw[lvl]}, rng, 0.5);
    }
    return fx;
  };
  run("detection_loss.cls", 10,
      [loss_fixture](int, SplitMix64& rng) {
        auto fx = loss_fixture(rng);
        return std::function<Tensor(const Tensor&)>([fx](const Tensor& x) {
          HeadOutputs outs = fx.outs;
          outs[0].cls = x;
          return detection_loss(outs, fx.targets);
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 1, 8, 8}, rng); });
  run("detection_loss.reg", 10,
      [loss_fixture](int, SplitMix64& rng) {
        auto fx = loss_fixture(rng);
        return std::function<Tensor(const Tensor&)>([fx](const Tensor& x) {
          HeadOutputs outs = fx.outs;
          outs[0].reg = x;
          return detection_loss(outs, fx.targets);
        });
      },
      [](int, SplitMix64& rng) { return randn_t({1, 4, 8, 8}, rng, 0.5); });

  // -- neck variants (input-gradient path through the full fusion) --------
  const auto neck_check = [&](NeckVariant variant) {
    run(std::string("neck.") + to_string(variant), 10,
        [variant](int p, SplitMix64& rng) {
          NeckConfig nc;
          nc.variant = variant;
          nc.out_channels = 4;
          auto store = std::make_shared<ParamStore>(
              derive_seed(9000 + p, std::string(to_string(variant))));
          auto neck =
              std::make_shared<Neck>(*store, nc, std::array<int, 4>{3, 4, 5, 6});
          const Tensor fm1 = detail::randn_t({1, 4, 4, 4}, rng);
          const Tensor fm2 = detail::randn_t({1, 5, 2, 2}, rng);
          const Tensor fm3 = detail::randn_t({1, 6, 1, 1}, rng);
          return std::function<Tensor(const Tensor&)>(
              [store, neck, fm1, fm2, fm3](const Tensor& x) {
                PyramidFeatures feats;
                feats.levels = {x, fm1, fm2, fm3};
                const NeckOutput out = neck->forward(feats);
                return detail::total_of({out.levels[0], out.levels[1],
                                         out.levels[2], out.levels[3]});
              });
        },
        [](int, SplitMix64& rng) { return randn_t({1, 3, 8, 8}, rng); });
  };
  neck_check(NeckVariant::kFPN);
  neck_check(NeckVariant::kPANet);
  neck_check(NeckVariant::kHRFPN);
  neck_check(NeckVariant::kMHFPN);

  // -- composed detector (fewer points; it is the expensive one) ----------
  run("detector.mhfpn", 2,
      [](int p, SplitMix64&) {
        RunConfig cfg;
        cfg.backbone.stem_channels = 2;
        cfg.backbone.stage_channels = {2, 3, 4, 5};
        cfg.neck.variant = NeckVariant::kMHFPN;
        cfg.neck.out_channels = 4;
        cfg.head.num_convs = 1;
        auto model = std::make_shared<Detector>(cfg, 777 + p);
        return std::function<Tensor(const Tensor&)>(
            [model](const Tensor& x) {
              const HeadOutputs outs = model->forward(x);
              std::vector<Tensor> parts;
              for (int lvl = 0; lvl < 4; ++lvl) {
                parts.push_back(outs[lvl].cls);
                parts.push_back(outs[lvl].reg);
              }
              return detail::total_of(parts);
            });
      },
      [](int, SplitMix64& rng) {
        return randn_t({1, 1, 32, 32}, rng, 0.5);
      });

  report.all_pass = true;
  for (const auto& e : report.entries) report.all_pass = report.all_pass && e.pass;
  return report;
}

}  // namespace neckbench
