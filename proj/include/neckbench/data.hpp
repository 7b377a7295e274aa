#pragma once

// Synthetic bimodal-mass dataset generator, five-part split protocol, and
// the on-disk formats: one 8-bit P5 PGM per image plus a single JSON
// annotation file. Everything is a pure function of (spec, seed) so runs
// are reproducible byte for byte.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "neckbench/boxes.hpp"
#include "neckbench/core.hpp"
#include "neckbench/metrics.hpp"

namespace neckbench {

struct SceneSpec {
  int image_side = 64;
  double masses_per_image_mean = 1.1;
  double small_fraction = 0.5;
  double small_area_lo = 9.0, small_area_hi = 36.0;    // px^2
  double large_area_lo = 400.0, large_area_hi = 900.0;  // px^2
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  // masses get a mild random aspect ratio in [kAspectLo, kAspectHi]
  static constexpr double kAspectLo = 0.75;
  static constexpr double kAspectHi = 4.0 / 3.0;

  void validate() const {
    if (image_side <= 0 || image_side % 32 != 0)
      throw std::invalid_argument("scene: image_side must be a positive "
                                  "multiple of 32, got " +
                                  std::to_string(image_side));
    if (masses_per_image_mean < 0.0)
      throw std::invalid_argument("scene: masses_per_image_mean must be >= 0");
    if (small_fraction < 0.0 || small_fraction > 1.0)
      throw std::invalid_argument("scene: small_fraction must lie in [0, 1]");
    if (small_area_lo <= 0.0 || small_area_hi < small_area_lo ||
        large_area_lo <= 0.0 || large_area_hi < large_area_lo)
      throw std::invalid_argument("scene: area ranges must be positive and "
                                  "ordered");
    if (small_area_hi >= large_area_lo)
      throw std::invalid_argument("scene: small and large area ranges must "
                                  "be disjoint");
    if (noise_sigma < 0.0)
      throw std::invalid_argument("scene: noise_sigma must be >= 0");
    const double max_side = std::sqrt(large_area_hi * kAspectHi);
    if (max_side > image_side)
      throw std::invalid_argument("scene: largest mass does not fit in a " +
                                  std::to_string(image_side) + "px image");
  }
};

struct AnnotatedImage {
  int image_id = 0;
  Tensor pixels;  // (1, 1, H, W), grayscale in [0, 1]
  std::vector<GroundTruth> gts;
};

/// Each image draws from its own RNG stream (seed + image id), in a fixed
/// order: background ramp, mass count (Poisson clamped to [0,3]), one block
/// of draws per mass, then per-pixel noise. Masses are soft Gaussian bumps;
/// the annotated box spans two sigma per axis, centered on the bump.
inline std::vector<AnnotatedImage> generate_dataset(const SceneSpec& spec,
                                                    int n_images) {
  spec.validate();
  if (n_images < 1)
    throw std::invalid_argument("generate_dataset: n_images must be >= 1");
  const int side = spec.image_side;
  std::vector<AnnotatedImage> out;
  out.reserve(n_images);
  for (int id = 0; id < n_images; ++id) {
    SplitMix64 rng(derive_seed(spec.seed, "image." + std::to_string(id)));
    AnnotatedImage img;
    img.image_id = id;
    img.pixels = Tensor::zeros({1, 1, side, side});
    double* px = img.pixels.ptr();

    const double base = 0.1 + 0.2 * rng.uniform();
    const double gx = -0.15 + 0.3 * rng.uniform();
    const double gy = -0.15 + 0.3 * rng.uniform();
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        px[y * side + x] = base + gx * (static_cast<double>(x) / side) +
                           gy * (static_cast<double>(y) / side);

    const int count = std::min<std::uint32_t>(
        rng.poisson(spec.masses_per_image_mean), 3);
    for (int m = 0; m < count; ++m) {
      const bool small = rng.uniform() < spec.small_fraction;
      const double lo = small ? spec.small_area_lo : spec.large_area_lo;
      const double hi = small ? spec.small_area_hi : spec.large_area_hi;
      const double area = lo + (hi - lo) * rng.uniform();
      const double aspect =
          SceneSpec::kAspectLo +
          (SceneSpec::kAspectHi - SceneSpec::kAspectLo) * rng.uniform();
      const double w = std::sqrt(area * aspect);
      const double h = area / w;
      const double cx = w / 2.0 + (side - w) * rng.uniform();
      const double cy = h / 2.0 + (side - h) * rng.uniform();
      const double amp = 0.5 + 0.5 * rng.uniform();
      const double sx = w / 2.0, sy = h / 2.0;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const double dx = (x + 0.5 - cx) / sx;
          const double dy = (y + 0.5 - cy) / sy;
          px[y * side + x] += amp * std::exp(-0.5 * (dx * dx + dy * dy));
        }
      Box b{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
      img.gts.push_back(make_ground_truth(id, b, side));
    }

    for (int i = 0; i < side * side; ++i) {
      px[i] += spec.noise_sigma * rng.gaussian();
      px[i] = std::clamp(px[i], 0.0, 1.0);
    }
    out.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Five-part split

struct SplitPlan {
  std::array<std::vector<int>, 5> parts;

  struct Roles {
    std::vector<int> train, val, test;
  };

  /// Replicate r tests on part r, validates on part (r+1) mod 5, trains on
  /// the remaining three parts.
  Roles replicate(int r) const {
    if (r < 0 || r >= 5)
      throw std::invalid_argument("split: replicate index " +
                                  std::to_string(r) + " out of range");
    Roles roles;
    roles.test = parts[r];
    roles.val = parts[(r + 1) % 5];
    for (int p = 0; p < 5; ++p) {
      if (p == r || p == (r + 1) % 5) continue;
      roles.train.insert(roles.train.end(), parts[p].begin(), parts[p].end());
    }
    return roles;
  }
};

/// Seeded shuffle then round-robin assignment, so part sizes differ by at
/// most one (107 ids -> {22, 22, 21, 21, 21}).
inline SplitPlan five_fold_split(std::vector<int> ids, std::uint64_t seed) {
  if (ids.size() < 5)
    throw std::invalid_argument("five_fold_split: need at least 5 ids, got " +
                                std::to_string(ids.size()));
  SplitMix64 rng(derive_seed(seed, "split.five_fold"));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(ids[i], ids[j]);
  }
  SplitPlan plan;
  for (std::size_t i = 0; i < ids.size(); ++i)
    plan.parts[i % 5].push_back(ids[i]);
  return plan;
}

// ---------------------------------------------------------------------------
// PGM I/O (binary P5, 8-bit)

inline void save_pgm(const Tensor& pixels, const std::string& path) {
  const Shape& s = pixels.shape();
  if (s.n != 1 || s.c != 1)
    throw std::invalid_argument("save_pgm: expected a (1,1,H,W) tensor, got " +
                                s.str());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_pgm: cannot open " + path);
  f << "P5\n" << s.w << " " << s.h << "\n255\n";
  const double* p = pixels.ptr();
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const long v = std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0);
    f.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  if (!f) throw std::runtime_error("save_pgm: write failed for " + path);
}

namespace detail {

// Skips PGM whitespace and '#' comments, then parses a non-negative int.
// Errors carry the byte offset to make malformed headers diagnosable.
inline int pgm_read_int(std::istream& f, const std::string& path) {
  int c = f.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = f.get();
    c = f.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error("load_pgm: " + path + ": expected integer at "
                             "byte offset " +
                             std::to_string(static_cast<long>(f.tellg()) - 1));
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1'000'000'000)
      throw std::runtime_error("load_pgm: " + path + ": oversized integer");
    c = f.get();
  }
  if (c != EOF) f.unget();
  return static_cast<int>(v);
}

}  // namespace detail

inline Tensor load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_pgm: cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5')
    throw std::runtime_error("load_pgm: " + path +
                             ": bad magic at byte offset 0 (want P5)");
  const int w = detail::pgm_read_int(f, path);
  const int h = detail::pgm_read_int(f, path);
  const int maxval = detail::pgm_read_int(f, path);
  if (w <= 0 || h <= 0)
    throw std::runtime_error("load_pgm: " + path + ": bad dimensions " +
                             std::to_string(w) + "x" + std::to_string(h));
  if (maxval != 255)
    throw std::runtime_error("load_pgm: " + path + ": only maxval 255 "
                             "supported, got " + std::to_string(maxval));
  f.get();  // the single whitespace byte after maxval
  Tensor t = Tensor::zeros({1, 1, h, w});
  double* p = t.ptr();
  for (std::size_t i = 0; i < t.shape().numel(); ++i) {
    const int c = f.get();
    if (c == EOF)
      throw std::runtime_error("load_pgm: " + path +
                               ": truncated pixel data at byte offset " +
                               std::to_string(static_cast<long>(f.tellg())));
    p[i] = static_cast<double>(c) / 255.0;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Annotation JSON

inline std::string image_file_name(int image_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%04d.pgm", image_id);
  return buf;
}

/// Writes <dir>/annotations.json plus one PGM per image.
inline void save_annotations(const std::vector<AnnotatedImage>& dataset,
                             const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json root;
  root["images"] = nlohmann::json::array();
  root["annotations"] = nlohmann::json::array();
  for (const auto& img : dataset) {
    const Shape& s = img.pixels.shape();
    const std::string file = image_file_name(img.image_id);
    save_pgm(img.pixels, (fs::path(dir) / file).string());
    root["images"].push_back({{"id", img.image_id},
                              {"file", file},
                              {"width", s.w},
                              {"height", s.h}});
    for (const auto& g : img.gts) {
      g.box.validate();
      root["annotations"].push_back(
          {{"image_id", img.image_id},
           {"bbox", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}});
    }
  }
  std::ofstream f((fs::path(dir) / "annotations.json").string(),
                  std::ios::binary);
  if (!f) throw std::runtime_error("save_annotations: cannot write to " + dir);
  f << root.dump(2) << "\n";
}

/// Reads an annotation JSON (and the PGMs referenced next to it). Order of
/// the "images" array is preserved; boxes are validated on the way in.
inline std::vector<AnnotatedImage> load_annotations(
    const std::string& json_path) {
  namespace fs = std::filesystem;
  std::ifstream f(json_path, std::ios::binary);
  if (!f)
    throw std::runtime_error("load_annotations: cannot open " + json_path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    // e.what() already carries the byte offset
    throw std::runtime_error("load_annotations: " + json_path + ": " +
                             e.what());
  }
  if (!root.contains("images") || !root.contains("annotations"))
    throw std::runtime_error("load_annotations: " + json_path +
                             ": missing images/annotations arrays");
  const fs::path base = fs::path(json_path).parent_path();
  std::vector<AnnotatedImage> dataset;
  std::map<int, std::size_t> index_of;
  for (const auto& je : root["images"]) {
    AnnotatedImage img;
    img.image_id = je.at("id").get<int>();
    const std::string file = je.at("file").get<std::string>();
    const int w = je.at("width").get<int>();
    const int h = je.at("height").get<int>();
    img.pixels = load_pgm((base / file).string());
    const Shape& s = img.pixels.shape();
    if (s.w != w || s.h != h)
      throw std::runtime_error("load_annotations: " + file + " is " +
                               std::to_string(s.w) + "x" + std::to_string(s.h) +
                               " but the annotation says " + std::to_string(w) +
                               "x" + std::to_string(h));
    if (index_of.count(img.image_id))
      throw std::runtime_error("load_annotations: duplicate image id " +
                               std::to_string(img.image_id));
    index_of[img.image_id] = dataset.size();
    dataset.push_back(std::move(img));
  }
  for (const auto& ja : root["annotations"]) {
    const int image_id = ja.at("image_id").get<int>();
    const auto it = index_of.find(image_id);
    if (it == index_of.end())
      throw std::runtime_error("load_annotations: annotation for unknown "
                               "image id " + std::to_string(image_id));
    const auto& bb = ja.at("bbox");
    if (!bb.is_array() || bb.size() != 4)
      throw std::runtime_error("load_annotations: bbox must be "
                               "[x1, y1, x2, y2]");
    Box b{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
          bb[3].get<double>()};
    if (b.x2 <= b.x1 || b.y2 <= b.y1)
      throw std::runtime_error(
          "load_annotations: invalid bbox [" + detail::fmt_f(b.x1, 3) + ", " +
          detail::fmt_f(b.y1, 3) + ", " + detail::fmt_f(b.x2, 3) + ", " +
          detail::fmt_f(b.y2, 3) + "] for image " + std::to_string(image_id));
    AnnotatedImage& img = dataset[it->second];
    img.gts.push_back(
        make_ground_truth(image_id, b, img.pixels.shape().w));
  }
  return dataset;
}

}  // namespace neckbench
