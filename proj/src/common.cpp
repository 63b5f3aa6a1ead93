#include "opembed/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace opembed {

// splitmix64
std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire's multiply-shift with rejection.
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (salt * 0xd1b54a32d192ed03ULL));
  r.next_u64();
  return r.next_u64();
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

double median(std::vector<double> values) {
  if (values.empty())
    return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  if (n % 2 == 1)
    return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace opembed

#include "opembed/payload.hpp"

namespace opembed {

using nlohmann::json;

json Payload::put(const Matrix &m) {
  json ref{{"offset", reals.size()}, {"rows", m.rows()}, {"cols", m.cols()}};
  reals.insert(reals.end(), m.data(), m.data() + m.size());
  return ref;
}

json Payload::put(const Vector &v) {
  json ref{{"offset", reals.size()}, {"rows", v.size()}, {"cols", 1}};
  reals.insert(reals.end(), v.data(), v.data() + v.size());
  return ref;
}

Matrix Payload::get_matrix(const json &ref) const {
  auto offset = ref.at("offset").get<std::size_t>();
  auto rows = ref.at("rows").get<Eigen::Index>();
  auto cols = ref.at("cols").get<Eigen::Index>();
  if (rows < 0 || cols < 0 || offset + static_cast<std::size_t>(rows * cols) > reals.size())
    throw Error("bundle", "payload reference out of range");
  return Eigen::Map<const Matrix>(reals.data() + offset, rows, cols);
}

Vector Payload::get_vector(const json &ref) const {
  Matrix m = get_matrix(ref);
  if (m.cols() != 1)
    throw Error("bundle", "payload reference is not a vector");
  return m.col(0);
}

} // namespace opembed
