#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace opembed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base error. `code()` is a short machine-readable tag that the CLI prints
/// before the message (e.g. "parse", "coverage", "hash_mismatch").
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string &what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string &code() const noexcept { return code_; }

private:
  std::string code_;
};

/// Seeded generator with explicitly defined distributions, so that a seed
/// produces the same stream on every standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double lognormal(double mu, double sigma);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T> void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream derived from this seed and a salt.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt);

private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string content_hash(std::string_view bytes);

std::vector<std::size_t> iota_indices(std::size_t n);

double median(std::vector<double> values);

} // namespace opembed
