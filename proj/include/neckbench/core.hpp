#pragma once

// Dense 4-D double tensors with reverse-mode gradient recording.
// Everything runs in double precision; the point of this library is
// verifiable numerics, not throughput.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace neckbench {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

/// 4-D (batch, channel, height, width) tensor. Value type: copies share the
/// underlying buffer, so forward ops always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    Tensor t;
    t.shape_ = s;
    t.data_ = std::make_shared<std::vector<double>>(s.numel(), 0.0);
    if (requires_grad) t.enable_grad();
    return t;
  }

  static Tensor full(Shape s, double value, bool requires_grad = false) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor from_values(Shape s, std::vector<double> values,
                            bool requires_grad = false) {
    if (values.size() != s.numel())
      throw std::invalid_argument("Tensor::from_values: " +
                                  std::to_string(values.size()) +
                                  " values for shape " + s.str());
    Tensor t;
    t.shape_ = s;
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    if (requires_grad) t.enable_grad();
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return full({1, 1, 1, 1}, value, requires_grad);
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }

  bool requires_grad() const { return requires_grad_; }
  void enable_grad() {
    requires_grad_ = true;
    if (!grad_) grad_ = std::make_shared<std::vector<double>>(numel(), 0.0);
  }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }
  double* ptr() { return data_->data(); }
  const double* ptr() const { return data_->data(); }

  /// Gradient buffer; only valid when requires_grad() is true.
  std::vector<double>& grad() {
    if (!grad_) throw std::runtime_error("Tensor: no grad buffer allocated");
    return *grad_;
  }
  const std::vector<double>& grad() const {
    if (!grad_) throw std::runtime_error("Tensor: no grad buffer allocated");
    return *grad_;
  }
  double* grad_ptr() { return grad_->data(); }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) *
               shape_.w + x;
  }
  double& at(int b, int ch, int y, int x) { return (*data_)[index(b, ch, y, x)]; }
  double at(int b, int ch, int y, int x) const {
    return (*data_)[index(b, ch, y, x)];
  }

  double item() const {
    if (numel() != 1)
      throw std::runtime_error("Tensor::item: tensor has " +
                               std::to_string(numel()) + " elements");
    return (*data_)[0];
  }

  /// Deep copy of the value buffer; grad tracking is not copied.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Debug dump: shape header line, then row-major values at 17 significant
  /// digits (round-trip exact for doubles).
  void dump(std::ostream& os) const;
  static Tensor parse(std::istream& is);

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

// ---------------------------------------------------------------------------
// Gradient tape

/// Ordered record of executed ops. Ops append adjoint closures while a tape
/// is active (see TapeScope); backward() replays them in reverse.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::function<void()> adjoint) {
    adjoints_.push_back(std::move(adjoint));
  }

  /// Propagates d(loss)/d(x) into every tracked tensor's grad buffer.
  /// Grad buffers accumulate: parameters not reached by the graph keep
  /// whatever they held before (zero after zero_grad).
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw std::invalid_argument("GradTape::backward: loss must be scalar");
    if (!loss.requires_grad())
      throw std::invalid_argument(
          "GradTape::backward: loss was not produced by tracked ops");
    if (used_)
      throw std::runtime_error(
          "GradTape::backward: tape already consumed; call reset() first");
    used_ = true;
    const_cast<Tensor&>(loss).grad()[0] = 1.0;
    for (auto it = adjoints_.rbegin(); it != adjoints_.rend(); ++it) (*it)();
  }

  void reset() {
    adjoints_.clear();
    used_ = false;
  }

  std::size_t size() const { return adjoints_.size(); }
  bool consumed() const { return used_; }

 private:
  std::vector<std::function<void()>> adjoints_;
  bool used_ = false;
};

namespace detail {
inline GradTape*& active_tape_slot() {
  thread_local GradTape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline GradTape* active_tape() { return detail::active_tape_slot(); }

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

// ---------------------------------------------------------------------------
// FLOP accounting

/// Accumulates op costs while installed (see FlopScope). Convention:
/// conv contributes 2*MACs + bias adds; pooling, upsampling and elementwise
/// ops contribute one count per output element; concat contributes nothing.
struct FlopCounter {
  long long flops = 0;
  long long macs = 0;

  void add_conv(long long conv_macs, long long bias_adds) {
    macs += conv_macs;
    flops += 2 * conv_macs + bias_adds;
  }
  void add_elementwise(long long out_elems) { flops += out_elems; }
};

namespace detail {
inline FlopCounter*& active_flop_slot() {
  thread_local FlopCounter* counter = nullptr;
  return counter;
}
}  // namespace detail

inline FlopCounter* active_flop_counter() { return detail::active_flop_slot(); }

class FlopScope {
 public:
  explicit FlopScope(FlopCounter& counter) : prev_(detail::active_flop_slot()) {
    detail::active_flop_slot() = &counter;
  }
  ~FlopScope() { detail::active_flop_slot() = prev_; }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* prev_;
};

// ---------------------------------------------------------------------------
// Seeded RNG (split-mix style)

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection for unbiased results.
    std::uint64_t x = next();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t l = static_cast<std::uint64_t>(m);
    if (l < n) {
      std::uint64_t t = (0 - n) % n;
      while (l < t) {
        x = next();
        m = static_cast<__uint128_t>(x) * n;
        l = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller (stdlib distributions are not
  /// bit-stable across implementations).
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Poisson sample by Knuth's product method; fine for small means.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    double limit = std::exp(-mean);
    double prod = uniform();
    int k = 0;
    while (prod > limit) {
      prod *= uniform();
      ++k;
    }
    return k;
  }
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Stable per-purpose seed stream: independent of creation order.
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
  SplitMix64 rng(base ^ fnv1a(tag));
  return rng.next();
}

// ---------------------------------------------------------------------------

inline void Tensor::dump(std::ostream& os) const {
  os << "tensor " << shape_.n << " " << shape_.c << " " << shape_.h << " "
     << shape_.w << "\n";
  std::ostringstream val;
  val.precision(17);
  const auto& d = *data_;
  std::size_t i = 0;
  for (int b = 0; b < shape_.n; ++b)
    for (int ch = 0; ch < shape_.c; ++ch)
      for (int y = 0; y < shape_.h; ++y) {
        val.str("");
        for (int x = 0; x < shape_.w; ++x) {
          if (x) val << " ";
          val << d[i++];
        }
        os << val.str() << "\n";
      }
}

inline Tensor Tensor::parse(std::istream& is) {
  std::string tag;
  Shape s;
  if (!(is >> tag >> s.n >> s.c >> s.h >> s.w) || tag != "tensor")
    throw std::runtime_error("Tensor::parse: bad header");
  std::vector<double> values(s.numel());
  for (auto& v : values)
    if (!(is >> v)) throw std::runtime_error("Tensor::parse: truncated values");
  return from_values(s, std::move(values));
}

}  // namespace neckbench
