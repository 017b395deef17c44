#pragma once

// Shared scalar types, error taxonomy, deterministic RNG and small math
// helpers used across the library. Eigen is the only math dependency.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace personarl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// --- Error taxonomy -------------------------------------------------------
// ConfigError    -> bad user-facing configuration (CLI exit code 2)
// NumericalError -> non-finite values / degenerate numerics (CLI exit code 3)
// FormatError    -> malformed files on disk
// StateError     -> API misuse (e.g. backward without a recorded forward)
// ProtocolError  -> evaluation protocol violations (e.g. train/test leakage)
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Thrown when a rank correlation is requested over a constant axis.
struct UndefinedCorrelationError : NumericalError {
  using NumericalError::NumericalError;
};

// --- Deterministic RNG ----------------------------------------------------
// mt19937_64 with fixed bit-to-double mappings so that streams are
// reproducible independent of the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(gen_()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  // Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // k distinct values from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

  // Fisher-Yates permutation of [0, n).
  std::vector<int> permutation(int n);

  std::string save_state() const {
    std::ostringstream os;
    os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
    return os.str();
  }
  void load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> gen_ >> spare_flag >> spare_;
    if (!is) throw FormatError("Rng::load_state: malformed state string");
    has_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64-style seed combinator; chain for more than two components.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

// --- Content hashing (FNV-1a 64) ------------------------------------------
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }
uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(uint64_t h);

// --- Small math helpers ----------------------------------------------------

// v / ||v||; throws NumericalError when ||v|| < eps.
inline Vec normalize_unit(const Vec& v, double eps = 1e-12) {
  double n = v.norm();
  if (!(n >= eps)) {
    throw NumericalError("normalize_unit: degenerate vector (norm < 1e-12)");
  }
  return v / n;
}

inline double cosine(const Vec& a, const Vec& b, double eps = 1e-12) {
  double na = a.norm(), nb = b.norm();
  if (!(na >= eps) || !(nb >= eps)) {
    throw NumericalError("cosine: degenerate input vector");
  }
  return a.dot(b) / (na * nb);
}

// Column-wise stable softmax of a logits matrix (actions x batch).
inline Mat softmax_columns(const Mat& logits) {
  Mat p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    Vec col = p.col(j);
    double m = col.maxCoeff();
    col = (col.array() - m).exp();
    p.col(j) = col / col.sum();
  }
  return p;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace personarl
