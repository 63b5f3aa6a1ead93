#include "opembed/reducers.hpp"

#include <algorithm>
#include <cmath>

namespace opembed {

using nlohmann::json;

namespace {

void orthogonalize(Vector &v, const Matrix &basis, Eigen::Index count) {
  for (Eigen::Index i = 0; i < count; ++i)
    v -= basis.row(i).dot(v) * basis.row(i).transpose();
}

void fix_sign(Vector &v) {
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg]))
      arg = i;
  if (v[arg] < 0)
    v = -v;
}

// Any unit vector orthogonal to the first `count` rows of `basis`.
Vector complement_direction(const Matrix &basis, Eigen::Index count, Eigen::Index dim) {
  for (Eigen::Index axis = 0; axis < dim; ++axis) {
    Vector v = Vector::Unit(dim, axis);
    orthogonalize(v, basis, count);
    orthogonalize(v, basis, count);
    if (v.norm() > 1e-6)
      return v / v.norm();
  }
  throw Error("pca", "no orthogonal direction left");
}

} // namespace

PcaModel fit_pca(const Matrix &rows, std::size_t k, const PcaOptions &opts) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2)
    throw Error("pca", "PCA needs at least two rows");
  if (k > static_cast<std::size_t>(d))
    throw Error("pca", "cannot extract " + std::to_string(k) + " components from " + std::to_string(d) +
                           " dimensions");
  PcaModel model;
  model.mean = rows.colwise().mean().transpose();
  Matrix centered = rows.rowwise() - model.mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const double scale = std::max(cov.diagonal().cwiseAbs().maxCoeff(), 1e-300);

  const auto kk = static_cast<Eigen::Index>(k);
  model.components.resize(kk, d);
  Rng rng(0x9ca5eedULL);
  for (Eigen::Index c = 0; c < kk; ++c) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i)
      v[i] = rng.normal();
    orthogonalize(v, model.components, c);
    double lambda = 0.0;
    if (v.norm() == 0.0) {
      v = complement_direction(model.components, c, d);
    } else {
      v.normalize();
      for (std::size_t it = 0; it < opts.max_iterations; ++it) {
        Vector w = cov * v;
        orthogonalize(w, model.components, c);
        double norm = w.norm();
        if (norm <= 1e-14 * scale) {
          // remaining spectrum is numerically zero
          v = complement_direction(model.components, c, d);
          break;
        }
        w /= norm;
        if (w.dot(v) < 0)
          w = -w;
        double change = (w - v).norm();
        v = std::move(w);
        if (change < opts.tolerance)
          break;
      }
    }
    fix_sign(v);
    lambda = v.dot(cov * v);
    model.components.row(c) = v.transpose();
    model.explained_variance.push_back(std::max(lambda, 0.0));
    cov -= lambda * v * v.transpose();
  }
  return model;
}

Vector transform(const PcaModel &model, const Vector &x) {
  if (x.size() != model.mean.size())
    throw Error("dimension", "PCA expects dimension " + std::to_string(model.mean.size()));
  return model.components * (x - model.mean);
}

Matrix transform(const PcaModel &model, const Matrix &rows) {
  if (rows.cols() != model.mean.size())
    throw Error("dimension", "PCA expects dimension " + std::to_string(model.mean.size()));
  return (rows.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Vector reconstruct(const PcaModel &model, const Vector &coords) {
  return model.mean + model.components.transpose() * coords;
}

double pearson(const Vector &a, const Vector &b) {
  Vector ca = a.array() - a.mean();
  Vector cb = b.array() - b.mean();
  double na = ca.norm(), nb = cb.norm();
  if (na < 1e-12 || nb < 1e-12)
    return 0.0;
  return ca.dot(cb) / (na * nb);
}

FaModel fit_fa(const Matrix &rows, std::size_t k) {
  const Eigen::Index n = rows.rows();
  const auto d = static_cast<std::size_t>(rows.cols());
  if (n < 2)
    throw Error("fa", "feature agglomeration needs at least two rows");
  if (k == 0 || k > d)
    throw Error("fa", "cannot agglomerate " + std::to_string(d) + " features into " + std::to_string(k));

  FaModel model;
  model.input_dim = d;
  std::vector<Vector> reps;
  for (std::size_t i = 0; i < d; ++i) {
    model.clusters.push_back({i});
    reps.push_back(rows.col(static_cast<Eigen::Index>(i)));
  }
  std::vector<std::vector<double>> corr(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      corr[i][j] = corr[j][i] = std::abs(pearson(reps[i], reps[j]));

  while (model.clusters.size() > k) {
    const std::size_t c = model.clusters.size();
    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i + 1; j < c; ++j)
        if (corr[i][j] > best) {
          best = corr[i][j];
          bi = i;
          bj = j;
        }
    auto &into = model.clusters[bi];
    into.insert(into.end(), model.clusters[bj].begin(), model.clusters[bj].end());
    std::sort(into.begin(), into.end());
    model.clusters.erase(model.clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    reps.erase(reps.begin() + static_cast<std::ptrdiff_t>(bj));
    corr.erase(corr.begin() + static_cast<std::ptrdiff_t>(bj));
    for (auto &row : corr)
      row.erase(row.begin() + static_cast<std::ptrdiff_t>(bj));

    Vector rep = Vector::Zero(n);
    for (auto s : into)
      rep += rows.col(static_cast<Eigen::Index>(s));
    reps[bi] = rep / static_cast<double>(into.size());
    for (std::size_t j = 0; j < model.clusters.size(); ++j)
      if (j != bi)
        corr[bi][j] = corr[j][bi] = std::abs(pearson(reps[bi], reps[j]));
  }
  return model;
}

Vector transform(const FaModel &model, const Vector &x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim)
    throw Error("dimension", "feature agglomeration expects dimension " + std::to_string(model.input_dim));
  Vector out(static_cast<Eigen::Index>(model.clusters.size()));
  for (std::size_t c = 0; c < model.clusters.size(); ++c) {
    double s = 0.0;
    for (auto i : model.clusters[c])
      s += x[static_cast<Eigen::Index>(i)];
    out[static_cast<Eigen::Index>(c)] = s / static_cast<double>(model.clusters[c].size());
  }
  return out;
}

Matrix transform(const FaModel &model, const Matrix &rows) {
  Matrix out(rows.rows(), static_cast<Eigen::Index>(model.clusters.size()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    out.row(r) = transform(model, Vector(rows.row(r).transpose())).transpose();
  return out;
}

Payload to_payload(const PcaModel &model) {
  Payload p;
  p.meta["mean"] = p.put(model.mean);
  p.meta["components"] = p.put(model.components);
  p.meta["explained_variance"] = model.explained_variance;
  return p;
}

PcaModel pca_from_payload(const Payload &p) {
  PcaModel m;
  try {
    m.mean = p.get_vector(p.meta.at("mean"));
    m.components = p.get_matrix(p.meta.at("components"));
    m.explained_variance = p.meta.at("explained_variance").get<std::vector<double>>();
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("malformed PCA payload: ") + e.what());
  }
  if (m.components.cols() != m.mean.size())
    throw Error("bundle", "PCA component dimension does not match its mean");
  return m;
}

Payload to_payload(const FaModel &model) {
  Payload p;
  p.meta = json{{"input_dim", model.input_dim}, {"clusters", model.clusters}};
  return p;
}

FaModel fa_from_payload(const Payload &p) {
  FaModel m;
  try {
    m.input_dim = p.meta.at("input_dim").get<std::size_t>();
    m.clusters = p.meta.at("clusters").get<std::vector<std::vector<std::size_t>>>();
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("malformed agglomeration payload: ") + e.what());
  }
  std::vector<bool> seen(m.input_dim, false);
  for (const auto &c : m.clusters) {
    if (c.empty())
      throw Error("bundle", "empty agglomeration cluster");
    for (auto i : c) {
      if (i >= m.input_dim || seen[i])
        throw Error("bundle", "agglomeration clusters are not a partition");
      seen[i] = true;
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw Error("bundle", "agglomeration clusters do not cover every slot");
  return m;
}

} // namespace opembed
