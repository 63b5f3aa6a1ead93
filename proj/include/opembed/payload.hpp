#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "opembed/common.hpp"

namespace opembed {

/// Bundle payload: JSON metadata plus a flat block of reals that the JSON
/// refers to by offset. Matrices are stored column-major.
struct Payload {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<double> reals;

  nlohmann::json put(const Matrix &m);
  nlohmann::json put(const Vector &v);
  Matrix get_matrix(const nlohmann::json &ref) const;
  Vector get_vector(const nlohmann::json &ref) const;
};

} // namespace opembed
