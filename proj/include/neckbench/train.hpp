#pragma once

// Training and experiment orchestration: the composed detector, checkpoint
// I/O, the SGD loop with cosine learning-rate decay and FROC-based
// best-epoch selection, single-run evaluation, and the four-variant
// ablation runner. Every piece is a deterministic function of
// (config, seed): no clocks, no global RNG.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "neckbench/backbone.hpp"
#include "neckbench/config.hpp"
#include "neckbench/data.hpp"
#include "neckbench/head.hpp"
#include "neckbench/metrics.hpp"
#include "neckbench/necks.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/params.hpp"

namespace neckbench {

// ---------------------------------------------------------------------------
// Composed model

class Detector {
 public:
  Detector(const RunConfig& cfg, std::uint64_t init_seed)
      : store_(init_seed),
        backbone_(store_, cfg.backbone),
        neck_(store_, cfg.neck, cfg.backbone.stage_channels),
        head_(store_, cfg.head, cfg.neck.out_channels) {}

  HeadOutputs forward(const Tensor& images) const {
    return head_.forward(neck_.forward(backbone_.forward(images)));
  }

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const Head& head() const { return head_; }
  const Neck& neck() const { return neck_; }

 private:
  ParamStore store_;
  Backbone backbone_;
  Neck neck_;
  Head head_;
};

// ---------------------------------------------------------------------------
// Parameter snapshots and checkpoints

using ParamSnapshot = std::vector<std::vector<double>>;

inline ParamSnapshot snapshot_params(const ParamStore& store) {
  ParamSnapshot snap;
  snap.reserve(store.params().size());
  for (const auto& p : store.params()) snap.push_back(p.tensor.data());
  return snap;
}

inline void restore_params(const ParamStore& store, const ParamSnapshot& snap) {
  if (snap.size() != store.params().size())
    throw std::invalid_argument("restore_params: snapshot has " +
                                std::to_string(snap.size()) +
                                " entries for a model with " +
                                std::to_string(store.params().size()));
  for (std::size_t i = 0; i < snap.size(); ++i) {
    Tensor t = store.params()[i].tensor;  // shares the buffer
    if (snap[i].size() != t.numel())
      throw std::invalid_argument("restore_params: size mismatch for '" +
                                  store.params()[i].name + "'");
    std::copy(snap[i].begin(), snap[i].end(), t.ptr());
  }
}

inline constexpr const char* kCheckpointMagic = "neckbench-checkpoint-v1";

/// Text header (magic, count, one name+shape line per parameter), then the
/// raw 64-bit values of every parameter in header order.
inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << kCheckpointMagic << "\n";
  f << "params " << store.params().size() << "\n";
  for (const auto& p : store.params()) {
    const Shape& s = p.tensor.shape();
    f << p.name << " " << s.n << " " << s.c << " " << s.h << " " << s.w
      << "\n";
  }
  f << "data\n";
  for (const auto& p : store.params()) {
    const auto& d = p.tensor.data();
    f.write(reinterpret_cast<const char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

/// Loads into an existing model. Unknown names, missing names, or shape
/// mismatches raise errors naming the offending parameter.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != kCheckpointMagic)
    throw std::runtime_error("load_checkpoint: " + path +
                             " is not a checkpoint (bad magic '" + magic +
                             "')");
  std::string word;
  std::size_t count = 0;
  if (!(f >> word >> count) || word != "params")
    throw std::runtime_error("load_checkpoint: " + path +
                             ": malformed header");
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    if (!(f >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w))
      throw std::runtime_error("load_checkpoint: " + path +
                               ": truncated parameter table");
  }
  if (!(f >> word) || word != "data")
    throw std::runtime_error("load_checkpoint: " + path +
                             ": missing data section");
  f.get();  // newline after "data"

  if (count != store.params().size())
    throw std::runtime_error(
        "load_checkpoint: checkpoint has " + std::to_string(count) +
        " parameters but the model has " +
        std::to_string(store.params().size()));
  for (const auto& e : entries) {
    Parameter& p = store.find(e.name);  // throws naming the parameter
    if (!(p.tensor.shape() == e.shape))
      throw std::runtime_error("load_checkpoint: shape mismatch for '" +
                               e.name + "': checkpoint " + e.shape.str() +
                               " vs model " + p.tensor.shape().str());
    auto& d = p.tensor.data();
    f.read(reinterpret_cast<char*>(d.data()),
           static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!f)
      throw std::runtime_error("load_checkpoint: " + path +
                               ": truncated values for '" + e.name + "'");
  }
  if (f.peek() != EOF)
    throw std::runtime_error("load_checkpoint: " + path +
                             ": trailing bytes after parameter data");
}

// ---------------------------------------------------------------------------
// Optimizer

/// SGD with classical momentum: v <- mu*v - lr*g; w <- w + v. When
/// grad_clip > 0 the global L2 norm of all gradients is capped first, the
/// usual guard for un-normalized detection stacks.
class SgdOptimizer {
 public:
  SgdOptimizer(const ParamStore& store, double momentum, double grad_clip = 0.0)
      : momentum_(momentum), grad_clip_(grad_clip) {
    for (const auto& p : store.params()) {
      tensors_.push_back(p.tensor);
      velocity_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step(double lr) {
    double scale = 1.0;
    if (grad_clip_ > 0.0) {
      double sq = 0.0;
      for (auto& t : tensors_) {
        const double* g = t.grad_ptr();
        for (std::size_t k = 0; k < t.numel(); ++k) sq += g[k] * g[k];
      }
      const double norm = std::sqrt(sq);
      if (norm > grad_clip_) scale = grad_clip_ / norm;
    }
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      double* w = tensors_[i].ptr();
      const double* g = tensors_[i].grad_ptr();
      auto& v = velocity_[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = momentum_ * v[k] - lr * scale * g[k];
        w[k] += v[k];
      }
    }
  }

 private:
  double momentum_;
  double grad_clip_;
  std::vector<Tensor> tensors_;
  std::vector<std::vector<double>> velocity_;
};

/// Cosine decay from the base rate to ~0 across the run.
inline double cosine_lr(double base_lr, int epoch, int total_epochs) {
  return base_lr * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * epoch / total_epochs));
}

// ---------------------------------------------------------------------------
// Batching helpers

inline Tensor stack_images(const std::vector<AnnotatedImage>& dataset,
                           const std::vector<int>& indices) {
  if (indices.empty())
    throw std::invalid_argument("stack_images: empty batch");
  const Shape& s0 = dataset[indices[0]].pixels.shape();
  Tensor batch =
      Tensor::zeros({static_cast<int>(indices.size()), 1, s0.h, s0.w});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = dataset[indices[b]].pixels;
    if (!(img.shape() == s0))
      throw std::invalid_argument("stack_images: image " +
                                  std::to_string(indices[b]) + " is " +
                                  img.shape().str() + ", expected " +
                                  s0.str());
    std::copy(img.ptr(), img.ptr() + img.numel(),
              batch.ptr() + b * img.numel());
  }
  return batch;
}

inline std::vector<Box> boxes_of(const AnnotatedImage& img) {
  std::vector<Box> out;
  out.reserve(img.gts.size());
  for (const auto& g : img.gts) out.push_back(g.box);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Runs the detector image by image (batch 1), decoding each into final
/// detections.
inline DetectionSet detect_all(const Detector& model,
                               const std::vector<AnnotatedImage>& dataset,
                               const std::vector<int>& indices) {
  DetectionSet dets;
  dets.reserve(indices.size());
  for (int idx : indices) {
    const AnnotatedImage& img = dataset[idx];
    const Shape& s = img.pixels.shape();
    Tensor one = Tensor::zeros({1, 1, s.h, s.w});
    std::copy(img.pixels.ptr(), img.pixels.ptr() + img.pixels.numel(),
              one.ptr());
    const HeadOutputs outs = model.forward(one);
    dets.push_back(
        decode_detections(outs, 0, s.h, s.w, model.head().config()));
  }
  return dets;
}

inline GroundTruthSet gts_of(const std::vector<AnnotatedImage>& dataset,
                             const std::vector<int>& indices) {
  GroundTruthSet gts;
  gts.reserve(indices.size());
  for (int idx : indices) gts.push_back(dataset[idx].gts);
  return gts;
}

/// Best TPR among FROC points with FPPI at or below the cap; the selection
/// rule behind per-epoch validation and best-checkpoint retention.
inline double froc_best_tpr(const FrocCurve& curve, double fppi_cap = 1.0) {
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.fppi <= fppi_cap && p.tpr > best) best = p.tpr;
  return best;
}

struct EvalArtifacts {
  MetricsReport report;
  std::string report_csv;  // header + one row
  std::string froc_csv;
};

inline EvalArtifacts evaluate_model(const Detector& model,
                                    const RunConfig& cfg,
                                    const std::vector<AnnotatedImage>& dataset,
                                    const std::vector<int>& indices,
                                    const std::string& label) {
  const DetectionSet dets = detect_all(model, dataset, indices);
  const GroundTruthSet gts = gts_of(dataset, indices);
  EvalArtifacts art;
  art.report = compute_report(dets, gts, cfg.eval_iou_thresholds,
                              cfg.eval_score_thresholds);
  art.report.params = count_params(model.store());
  const int side = cfg.data.image_side;
  art.report.flops = count_flops([&] {
    model.forward(Tensor::zeros({1, 1, side, side}));
  });
  art.report_csv = std::string(kReportCsvHeader) + "\n" +
                   report_csv_row(label, art.report) + "\n";
  art.froc_csv = froc_csv(art.report.froc);
  return art;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> val_tpr;     // FROC-selected TPR per epoch
  int best_epoch = -1;
  ParamSnapshot best_params;
  std::string log;  // "epoch,loss,val_tpr" CSV
};

/// SGD with momentum and cosine decay. Shuffling, initialization, and
/// therefore the entire trajectory are functions of cfg.train_seed. The
/// per-epoch validation TPR (FROC point with FPPI <= 1) drives best-epoch
/// snapshotting; a non-finite loss aborts with epoch/batch context.
inline TrainResult train_detector(Detector& model, const RunConfig& cfg,
                                  const std::vector<AnnotatedImage>& dataset,
                                  std::vector<int> train_indices,
                                  const std::vector<int>& val_indices) {
  if (train_indices.empty())
    throw std::invalid_argument("train_detector: empty training set");
  // Targets are fixed per image; compute them once.
  std::vector<ImageTargets> targets_by_index(dataset.size());
  std::vector<char> have_targets(dataset.size(), 0);
  for (int idx : train_indices) {
    const Shape& s = dataset[idx].pixels.shape();
    targets_by_index[idx] =
        assign_targets(boxes_of(dataset[idx]), s.h, s.w, cfg.head);
    have_targets[idx] = 1;
  }

  SgdOptimizer opt(model.store(), cfg.train_momentum, cfg.train_grad_clip);
  TrainResult result;
  result.log = "epoch,loss,val_tpr\n";
  double best_tpr = -1.0;

  for (int epoch = 0; epoch < cfg.train_epochs; ++epoch) {
    SplitMix64 shuffle_rng(derive_seed(
        cfg.train_seed, "shuffle.epoch." + std::to_string(epoch)));
    for (std::size_t i = train_indices.size() - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.below(i + 1);
      std::swap(train_indices[i], train_indices[j]);
    }

    const double lr = cosine_lr(cfg.train_lr, epoch, cfg.train_epochs);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < train_indices.size();
         start += cfg.train_batch_size) {
      const std::size_t stop = std::min(
          start + cfg.train_batch_size, train_indices.size());
      const std::vector<int> batch_idx(train_indices.begin() + start,
                                       train_indices.begin() + stop);
      const Tensor images = stack_images(dataset, batch_idx);
      std::vector<ImageTargets> targets;
      targets.reserve(batch_idx.size());
      for (int idx : batch_idx) targets.push_back(targets_by_index[idx]);

      model.store().zero_grads();
      GradTape tape;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        const HeadOutputs outs = model.forward(images);
        const Tensor loss = detection_loss(outs, targets);
        loss_value = loss.item();
        if (!std::isfinite(loss_value))
          throw std::runtime_error(
              "training diverged: non-finite loss at epoch " +
              std::to_string(epoch) + ", batch " + std::to_string(batches));
        tape.backward(loss);
      }
      opt.step(lr);
      loss_sum += loss_value;
      ++batches;
    }
    const double mean_loss = loss_sum / batches;
    result.epoch_loss.push_back(mean_loss);

    double vtpr = 0.0;
    if (!val_indices.empty()) {
      const DetectionSet dets = detect_all(model, dataset, val_indices);
      const GroundTruthSet gts = gts_of(dataset, val_indices);
      vtpr = froc_best_tpr(froc(dets, gts, 0.50, cfg.eval_score_thresholds));
    }
    result.val_tpr.push_back(vtpr);
    if (vtpr > best_tpr) {
      best_tpr = vtpr;
      result.best_epoch = epoch;
      result.best_params = snapshot_params(model.store());
    }
    result.log += std::to_string(epoch) + "," + detail::fmt_f(mean_loss) +
                  "," + detail::fmt_f(vtpr) + "\n";
  }
  if (result.best_epoch < 0) {
    result.best_epoch = cfg.train_epochs - 1;
    result.best_params = snapshot_params(model.store());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Split protocol shared by train / eval / ablate

struct ExperimentSplit {
  SplitPlan plan;
  std::vector<int> pool;  // fixed extra training ids, never rotated
};

/// The first 5*k dataset indices rotate through the five-part protocol
/// (k = max(1, n/6)); the remainder always trains. At n = 300 this yields
/// 200 train / 50 val / 50 test per replicate.
inline ExperimentSplit make_experiment_split(std::size_t n_images,
                                             std::uint64_t seed) {
  if (n_images < 5)
    throw std::invalid_argument("make_experiment_split: need >= 5 images, "
                                "got " + std::to_string(n_images));
  const std::size_t k =
      std::max<std::size_t>(1, n_images / 6);
  const std::size_t rotated = std::min(5 * k, n_images);
  std::vector<int> ids(rotated);
  for (std::size_t i = 0; i < rotated; ++i) ids[i] = static_cast<int>(i);
  ExperimentSplit split;
  split.plan = five_fold_split(ids, seed);
  for (std::size_t i = rotated; i < n_images; ++i)
    split.pool.push_back(static_cast<int>(i));
  return split;
}

struct ReplicaIndices {
  std::vector<int> train, val, test;
};

inline ReplicaIndices replica_indices(const ExperimentSplit& split, int r) {
  const SplitPlan::Roles roles = split.plan.replicate(r);
  ReplicaIndices out;
  out.train = roles.train;
  out.train.insert(out.train.end(), split.pool.begin(), split.pool.end());
  out.val = roles.val;
  out.test = roles.test;
  return out;
}

inline std::vector<AnnotatedImage> obtain_dataset(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) return load_annotations(cfg.data_path);
  return generate_dataset(cfg.data, cfg.data_n_images);
}

// ---------------------------------------------------------------------------
// Ablation runner

struct AblationResult {
  struct VariantResult {
    std::string variant;
    std::vector<MetricsReport> replicates;
  };
  std::vector<VariantResult> variants;
  std::string summary_csv;  // cells "mean (std)" across replicates
  std::string max_csv;      // per-metric maximum across replicates
  std::string raw_csv;      // every replicate row
};

namespace detail {

struct Agg {
  double mean = 0.0, stddev = 0.0, maxv = 0.0;
  int defined = 0;
};

inline Agg aggregate(const std::vector<std::optional<double>>& vals) {
  Agg a;
  for (const auto& v : vals)
    if (v) {
      a.mean += *v;
      a.maxv = a.defined == 0 ? *v : std::max(a.maxv, *v);
      ++a.defined;
    }
  if (a.defined == 0) return a;
  a.mean /= a.defined;
  if (a.defined >= 2) {
    double ss = 0.0;
    for (const auto& v : vals)
      if (v) ss += (*v - a.mean) * (*v - a.mean);
    a.stddev = std::sqrt(ss / (a.defined - 1));
  }
  return a;
}

inline std::string mean_std_cell(const std::vector<std::optional<double>>& v) {
  const Agg a = aggregate(v);
  if (a.defined == 0) return "-";
  return fmt_f(a.mean) + " (" + fmt_f(a.stddev) + ")";
}

inline std::string max_cell(const std::vector<std::optional<double>>& v) {
  const Agg a = aggregate(v);
  if (a.defined == 0) return "-";
  return fmt_f(a.maxv);
}

}  // namespace detail

/// Trains and evaluates every neck variant over the 5-replicate rotation
/// with shared splits, seeds, and schedule; only the neck differs. Emits
/// the mean (std) table, a max-aggregated table, and the raw rows.
inline AblationResult run_ablation(const RunConfig& base_cfg) {
  base_cfg.validate();
  const std::vector<AnnotatedImage> dataset = obtain_dataset(base_cfg);
  const ExperimentSplit split =
      make_experiment_split(dataset.size(), base_cfg.data.seed);
  const NeckVariant order[] = {NeckVariant::kFPN, NeckVariant::kHRFPN,
                               NeckVariant::kPANet, NeckVariant::kMHFPN};

  AblationResult result;
  std::string raw = std::string("variant,replicate,") +
                    (kReportCsvHeader + std::strlen("variant,")) + "\n";
  for (const NeckVariant variant : order) {
    AblationResult::VariantResult vr;
    vr.variant = to_string(variant);
    for (int r = 0; r < 5; ++r) {
      RunConfig cfg = base_cfg;
      cfg.neck.variant = variant;
      cfg.train_seed = derive_seed(base_cfg.train_seed,
                                   "replicate." + std::to_string(r));
      const ReplicaIndices idx = replica_indices(split, r);
      Detector model(cfg, derive_seed(cfg.train_seed, "init"));
      TrainResult tr;
      try {
        tr = train_detector(model, cfg, dataset, idx.train, idx.val);
      } catch (const std::exception& e) {
        throw std::runtime_error("ablation failed at variant " + vr.variant +
                                 ", replicate " + std::to_string(r) + ": " +
                                 e.what());
      }
      restore_params(model.store(), tr.best_params);
      const EvalArtifacts art =
          evaluate_model(model, cfg, dataset, idx.test, vr.variant);
      vr.replicates.push_back(art.report);
      raw += vr.variant + "," + std::to_string(r) + "," +
             report_csv_row("", art.report).substr(1) + "\n";
    }
    result.variants.push_back(std::move(vr));
  }

  auto column = [](const AblationResult::VariantResult& vr, auto getter) {
    std::vector<std::optional<double>> vals;
    for (const auto& rep : vr.replicates) vals.push_back(getter(rep));
    return vals;
  };
  std::string summary = std::string(kReportCsvHeader) + "\n";
  std::string maxed = std::string(kReportCsvHeader) + "\n";
  for (const auto& vr : result.variants) {
    const auto ap50 = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.ap, 50);
    });
    const auto ap75 = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.ap, 75);
    });
    const auto ap50s = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.ap_small, 50);
    });
    const auto ap50l = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.ap_large, 50);
    });
    const auto tpr50 = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.tpr, 50);
    });
    const auto tpr20 = column(vr, [](const MetricsReport& m) {
      return detail::opt_metric(m.tpr, 20);
    });
    const auto fppi = column(vr, [](const MetricsReport& m) {
      return std::optional<double>(m.fppi);
    });
    const long long params = vr.replicates.front().params;
    const long long flops = vr.replicates.front().flops;
    summary += vr.variant + "," + detail::mean_std_cell(ap50) + "," +
               detail::mean_std_cell(ap75) + "," +
               detail::mean_std_cell(ap50s) + "," +
               detail::mean_std_cell(ap50l) + "," +
               detail::mean_std_cell(tpr50) + "," +
               detail::mean_std_cell(tpr20) + "," +
               detail::mean_std_cell(fppi) + "," + std::to_string(params) +
               "," + std::to_string(flops) + "\n";
    maxed += vr.variant + "," + detail::max_cell(ap50) + "," +
             detail::max_cell(ap75) + "," + detail::max_cell(ap50s) + "," +
             detail::max_cell(ap50l) + "," + detail::max_cell(tpr50) + "," +
             detail::max_cell(tpr20) + "," + detail::max_cell(fppi) + "," +
             std::to_string(params) + "," + std::to_string(flops) + "\n";
  }
  result.summary_csv = summary;
  result.max_csv = maxed;
  result.raw_csv = raw;
  return result;
}

}  // namespace neckbench
