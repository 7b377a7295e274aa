#pragma once

// Flat `key = value` run configuration. '#' starts a comment, blank lines
// are skipped, later assignments win, and unknown keys are hard errors so
// typos cannot silently fall back to defaults. resolved() dumps every key
// in sorted order, which doubles as the run log and round-trips through
// parse().

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "neckbench/backbone.hpp"
#include "neckbench/data.hpp"
#include "neckbench/head.hpp"
#include "neckbench/necks.hpp"

namespace neckbench {

struct RunConfig {
  BackboneConfig backbone;
  NeckConfig neck;
  HeadConfig head;
  SceneSpec data;
  int data_n_images = 300;
  std::string data_path;  // optional: load annotations.json instead

  double train_lr = 0.01;
  double train_momentum = 0.9;
  double train_grad_clip = 10.0;  // global L2 cap; 0 disables
  int train_epochs = 30;
  int train_batch_size = 4;
  std::uint64_t train_seed = 1;

  std::vector<double> eval_iou_thresholds = {0.2, 0.5, 0.75};
  std::vector<double> eval_score_thresholds = {
      0.95, 0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.55, 0.50,
      0.45, 0.40, 0.35, 0.30, 0.25, 0.20, 0.15, 0.10, 0.05};
  std::string eval_checkpoint;

  void validate() const {
    backbone.validate();
    neck.validate();
    head.validate();
    data.validate();
    if (data_n_images < 1)
      throw std::invalid_argument("config: data.n_images must be >= 1");
    if (train_lr <= 0.0)
      throw std::invalid_argument("config: train.lr must be > 0");
    if (train_momentum < 0.0 || train_momentum >= 1.0)
      throw std::invalid_argument("config: train.momentum must lie in [0, 1)");
    if (train_grad_clip < 0.0)
      throw std::invalid_argument("config: train.grad_clip must be >= 0");
    if (train_epochs < 1)
      throw std::invalid_argument("config: train.epochs must be >= 1");
    if (train_batch_size < 1)
      throw std::invalid_argument("config: train.batch_size must be >= 1");
    if (eval_iou_thresholds.empty() || eval_score_thresholds.empty())
      throw std::invalid_argument("config: eval threshold lists must be "
                                  "non-empty");
  }

  void set(const std::string& key, const std::string& value);
  std::string resolved() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long r = 0;
  try {
    r = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    throw std::invalid_argument("config: key '" + key +
                                "' expects an integer, got '" + v + "'");
  return r;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double r = 0.0;
  try {
    r = std::stod(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    throw std::invalid_argument("config: key '" + key +
                                "' expects a number, got '" + v + "'");
  return r;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key +
                              "' expects true/false, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v,
                          Parse parse_one) {
  std::vector<T> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ','))
    out.push_back(parse_one(key, trim(cur)));
  if (out.empty())
    throw std::invalid_argument("config: key '" + key +
                                "' expects a comma-separated list");
  return out;
}

inline std::string fmt_real_cfg(double v) {
  // shortest representation that round-trips, so resolved() is stable
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_list;
  using detail::parse_real;
  if (key == "backbone.stem_channels") {
    backbone.stem_channels = static_cast<int>(parse_int(key, value));
  } else if (key == "backbone.stage_channels") {
    const auto v = parse_list<long long>(key, value, parse_int);
    if (v.size() != 4)
      throw std::invalid_argument("config: backbone.stage_channels expects "
                                  "exactly 4 values");
    for (int i = 0; i < 4; ++i)
      backbone.stage_channels[i] = static_cast<int>(v[i]);
  } else if (key == "backbone.blocks_per_stage") {
    backbone.blocks_per_stage = static_cast<int>(parse_int(key, value));
  } else if (key == "neck.variant") {
    neck.variant = neck_variant_from(value);
  } else if (key == "neck.out_channels") {
    neck.out_channels = static_cast<int>(parse_int(key, value));
  } else if (key == "neck.merge_mode") {
    if (value == "sum")
      neck.merge_mode = MergeMode::kSum;
    else if (value == "concat_conv")
      neck.merge_mode = MergeMode::kConcatConv;
    else
      throw std::invalid_argument("config: neck.merge_mode expects "
                                  "sum|concat_conv, got '" + value + "'");
  } else if (key == "neck.pool_mode") {
    if (value == "max")
      neck.pool_mode = PoolMode::kMax;
    else if (value == "avg")
      neck.pool_mode = PoolMode::kAvg;
    else
      throw std::invalid_argument("config: neck.pool_mode expects max|avg, "
                                  "got '" + value + "'");
  } else if (key == "neck.relu_after_convs") {
    neck.relu_after_convs = parse_bool(key, value);
  } else if (key == "head.num_convs") {
    head.num_convs = static_cast<int>(parse_int(key, value));
  } else if (key == "head.center_radius") {
    head.center_radius = parse_real(key, value);
  } else if (key == "head.score_threshold") {
    head.score_threshold = parse_real(key, value);
  } else if (key == "head.nms_iou") {
    head.nms_iou = parse_real(key, value);
  } else if (key == "data.image_side") {
    data.image_side = static_cast<int>(parse_int(key, value));
  } else if (key == "data.masses_per_image_mean") {
    data.masses_per_image_mean = parse_real(key, value);
  } else if (key == "data.small_fraction") {
    data.small_fraction = parse_real(key, value);
  } else if (key == "data.small_area_lo") {
    data.small_area_lo = parse_real(key, value);
  } else if (key == "data.small_area_hi") {
    data.small_area_hi = parse_real(key, value);
  } else if (key == "data.large_area_lo") {
    data.large_area_lo = parse_real(key, value);
  } else if (key == "data.large_area_hi") {
    data.large_area_hi = parse_real(key, value);
  } else if (key == "data.noise_sigma") {
    data.noise_sigma = parse_real(key, value);
  } else if (key == "data.seed") {
    data.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "data.n_images") {
    data_n_images = static_cast<int>(parse_int(key, value));
  } else if (key == "data.path") {
    data_path = value;
  } else if (key == "train.lr") {
    train_lr = parse_real(key, value);
  } else if (key == "train.momentum") {
    train_momentum = parse_real(key, value);
  } else if (key == "train.grad_clip") {
    train_grad_clip = parse_real(key, value);
  } else if (key == "train.epochs") {
    train_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "train.batch_size") {
    train_batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "train.seed") {
    train_seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "eval.iou_thresholds") {
    eval_iou_thresholds = parse_list<double>(key, value, parse_real);
  } else if (key == "eval.score_thresholds") {
    eval_score_thresholds = parse_list<double>(key, value, parse_real);
  } else if (key == "eval.checkpoint") {
    eval_checkpoint = value;
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line +
                                  "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  ": empty key");
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string RunConfig::resolved() const {
  using detail::fmt_real_cfg;
  std::map<std::string, std::string> kv;
  kv["backbone.stem_channels"] = std::to_string(backbone.stem_channels);
  {
    std::string v;
    for (int i = 0; i < 4; ++i)
      v += (i ? "," : "") + std::to_string(backbone.stage_channels[i]);
    kv["backbone.stage_channels"] = v;
  }
  kv["backbone.blocks_per_stage"] = std::to_string(backbone.blocks_per_stage);
  kv["neck.variant"] = to_string(neck.variant);
  kv["neck.out_channels"] = std::to_string(neck.out_channels);
  kv["neck.merge_mode"] =
      neck.merge_mode == MergeMode::kSum ? "sum" : "concat_conv";
  kv["neck.pool_mode"] = to_string(neck.pool_mode);
  kv["neck.relu_after_convs"] = neck.relu_after_convs ? "true" : "false";
  kv["head.num_convs"] = std::to_string(head.num_convs);
  kv["head.center_radius"] = fmt_real_cfg(head.center_radius);
  kv["head.score_threshold"] = fmt_real_cfg(head.score_threshold);
  kv["head.nms_iou"] = fmt_real_cfg(head.nms_iou);
  kv["data.image_side"] = std::to_string(data.image_side);
  kv["data.masses_per_image_mean"] = fmt_real_cfg(data.masses_per_image_mean);
  kv["data.small_fraction"] = fmt_real_cfg(data.small_fraction);
  kv["data.small_area_lo"] = fmt_real_cfg(data.small_area_lo);
  kv["data.small_area_hi"] = fmt_real_cfg(data.small_area_hi);
  kv["data.large_area_lo"] = fmt_real_cfg(data.large_area_lo);
  kv["data.large_area_hi"] = fmt_real_cfg(data.large_area_hi);
  kv["data.noise_sigma"] = fmt_real_cfg(data.noise_sigma);
  kv["data.seed"] = std::to_string(data.seed);
  kv["data.n_images"] = std::to_string(data_n_images);
  if (!data_path.empty()) kv["data.path"] = data_path;
  kv["train.lr"] = fmt_real_cfg(train_lr);
  kv["train.momentum"] = fmt_real_cfg(train_momentum);
  kv["train.grad_clip"] = fmt_real_cfg(train_grad_clip);
  kv["train.epochs"] = std::to_string(train_epochs);
  kv["train.batch_size"] = std::to_string(train_batch_size);
  kv["train.seed"] = std::to_string(train_seed);
  {
    std::string v;
    for (std::size_t i = 0; i < eval_iou_thresholds.size(); ++i)
      v += (i ? "," : "") + fmt_real_cfg(eval_iou_thresholds[i]);
    kv["eval.iou_thresholds"] = v;
  }
  {
    std::string v;
    for (std::size_t i = 0; i < eval_score_thresholds.size(); ++i)
      v += (i ? "," : "") + fmt_real_cfg(eval_score_thresholds[i]);
    kv["eval.score_thresholds"] = v;
  }
  if (!eval_checkpoint.empty()) kv["eval.checkpoint"] = eval_checkpoint;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace neckbench
