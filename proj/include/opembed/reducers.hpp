#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "opembed/common.hpp"
#include "opembed/payload.hpp"

namespace opembed {

struct PcaModel {
  Vector mean;                        // D
  Matrix components;                  // K x D, orthonormal rows
  std::vector<double> explained_variance; // nonincreasing

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }
};

struct PcaOptions {
  double tolerance = 1e-9;
  std::size_t max_iterations = 10000;
};

/// Power iteration with deflation on the sample covariance of `rows`
/// (one observation per row). Each component's largest-magnitude coordinate
/// is made positive.
PcaModel fit_pca(const Matrix &rows, std::size_t k, const PcaOptions &opts = {});
Vector transform(const PcaModel &model, const Vector &x);
Matrix transform(const PcaModel &model, const Matrix &rows); // row-wise
Vector reconstruct(const PcaModel &model, const Vector &coords);

/// Feature agglomeration: slots grouped into clusters; a reduced feature is
/// the mean of its member slots.
struct FaModel {
  std::size_t input_dim = 0;
  std::vector<std::vector<std::size_t>> clusters; // each sorted, ordered by first member

  std::size_t output_dim() const { return clusters.size(); }
};

/// Greedily merges the pair of clusters whose mean columns have the largest
/// absolute Pearson correlation (ties: lowest index pair) until `k` remain.
/// Correlations involving a constant column are 0.
FaModel fit_fa(const Matrix &rows, std::size_t k);
Vector transform(const FaModel &model, const Vector &x);
Matrix transform(const FaModel &model, const Matrix &rows);

/// Pearson correlation of two columns; 0 when either is constant.
double pearson(const Vector &a, const Vector &b);

Payload to_payload(const PcaModel &model);
PcaModel pca_from_payload(const Payload &p);
Payload to_payload(const FaModel &model);
FaModel fa_from_payload(const Payload &p);

} // namespace opembed
