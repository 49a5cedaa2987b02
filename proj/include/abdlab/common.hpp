#pragma once

// Shared primitives: image/token types, deterministic RNG, content hashing,
// little-endian binary IO and small dense linear algebra.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace abdlab {

inline constexpr int kImageChannels = 3;
inline constexpr int kImageSide = 32;
inline constexpr int kImagePixels = kImageChannels * kImageSide * kImageSide;

// Dense channel-major pixel array, kImagePixels doubles in [0,1].
using Image = std::vector<double>;

inline Image make_image(double fill = 0.0) { return Image(kImagePixels, fill); }

inline int pixel_index(int c, int y, int x) {
  return (c * kImageSide + y) * kImageSide + x;
}

struct CaptionTokens {
  std::vector<int> ids;  // padded with pad id 0 to the model's max caption length
  std::string text;
};

// Refusal to mix artifacts whose vocab/config hashes disagree.
struct CompatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64). Cross-platform stable, cheap to fork.
// ---------------------------------------------------------------------------

struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0,n), rejection-sampled so the draw is unbiased.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  // Uniform integer in [lo, hi] inclusive.
  int range(int lo, int hi) {
    return lo + int(below(uint64_t(hi - lo) + 1));
  }
};

// Scrambles two seeds into one stream id, so derived streams do not collide
// with sequentially numbered parents.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return mix_seed(a, h);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64) for vocab/config/checkpoint compatibility.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a(const void* data, size_t n,
                      uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

inline std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

inline std::string hash_file_hex(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hashing: " + p.string());
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a(buf, size_t(in.gcount()), h);
  return hash_hex(h);
}

// ---------------------------------------------------------------------------
// Little-endian double IO. Checkpoints, datasets and perturbations round-trip
// bit-exactly through these.
// ---------------------------------------------------------------------------

inline void write_f64_le(std::ostream& out, std::span<const double> v) {
  std::string buf;
  buf.reserve(v.size() * 8);
  for (double d : v) {
    uint64_t u = std::bit_cast<uint64_t>(d);
    for (int i = 0; i < 8; ++i) buf.push_back(char((u >> (8 * i)) & 0xff));
  }
  out.write(buf.data(), std::streamsize(buf.size()));
}

inline void read_f64_le(std::istream& in, std::span<double> v) {
  std::string buf(v.size() * 8, '\0');
  in.read(buf.data(), std::streamsize(buf.size()));
  if (size_t(in.gcount()) != buf.size())
    throw std::runtime_error("binary stream truncated");
  for (size_t k = 0; k < v.size(); ++k) {
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i)
      u |= uint64_t(static_cast<unsigned char>(buf[k * 8 + i])) << (8 * i);
    v[k] = std::bit_cast<double>(u);
  }
}

inline void write_doubles_file(const std::filesystem::path& p,
                               std::span<const double> v) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + p.string());
  write_f64_le(out, v);
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

inline std::vector<double> read_doubles_file(const std::filesystem::path& p,
                                             size_t expected) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read: " + p.string());
  std::vector<double> v(expected);
  read_f64_le(in, v);
  return v;
}

// ---------------------------------------------------------------------------
// Small dense linear algebra. Row-major, contiguous rows so the inner dot
// products and axpy updates vectorize.
// ---------------------------------------------------------------------------

using Vec = std::vector<double>;

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}

  double* row(int i) { return a.data() + size_t(i) * cols; }
  const double* row(int i) const { return a.data() + size_t(i) * cols; }
  double& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
  double operator()(int i, int j) const { return a[size_t(i) * cols + j]; }
  size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double l2_norm(std::span<const double> v) {
  return std::sqrt(dot(v.data(), v.data(), int(v.size())));
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline Image clamp01(Image im) {
  for (double& v : im) v = clamp01(v);
  return im;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace abdlab
