// Copyright 2026 The cpt-workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpt/codebook.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cpt/error.hpp"
#include "cpt/kernels.hpp"
#include "cpt/rng.hpp"

namespace cpt {

double l2_normalize_into(std::span<const double> x, std::span<double> out) {
  const double norm = std::sqrt(kern::dot(x, x));
  if (!(norm >= kMinNorm)) {
    fail(ErrorKind::DegenerateVector, "cannot normalize vector with norm " + std::to_string(norm));
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / norm;
  return norm;
}

std::vector<double> l2_normalize(std::span<const double> x) {
  std::vector<double> out(x.size());
  l2_normalize_into(x, out);
  return out;
}

void normalize_backward(std::span<const double> unit, double norm, std::span<const double> grad_unit,
                        std::span<double> grad_x) {
  const double proj = kern::dot(unit, grad_unit);
  for (std::size_t i = 0; i < unit.size(); ++i) {
    grad_x[i] = (grad_unit[i] - unit[i] * proj) / norm;
  }
}

Codebook Codebook::uniform_init(std::size_t k, std::size_t d, std::uint64_t seed, double scale) {
  require(k >= 1 && d >= 1, ErrorKind::InvalidArgument, "codebook needs K >= 1 and D >= 1");
  Codebook cb;
  cb.codes = Matrix(k, d);
  cb.usage.assign(k, 0.0);
  Rng rng(seed);
  for (double& v : cb.codes.flat()) v = rng.uniform(-scale, scale);
  return cb;
}

void Codebook::validate() const {
  require(size() >= 1, ErrorKind::InvalidArgument, "empty codebook");
  require(usage.size() == size(), ErrorKind::DimensionMismatch, "usage vector does not match K");
  for (double v : codes.flat()) {
    require(std::isfinite(v), ErrorKind::NumericalAbort, "non-finite codebook entry");
  }
  for (double u : usage) {
    require(u >= 0.0 && u <= 1.0, ErrorKind::InvalidArgument, "usage outside [0,1]");
  }
}

namespace {

Matrix normalized_codes(const Codebook& cb, std::vector<double>* norms) {
  Matrix out(cb.size(), cb.dim());
  if (norms) norms->resize(cb.size());
  for (std::size_t k = 0; k < cb.size(); ++k) {
    const double n = l2_normalize_into(cb.codes.row(k), out.row(k));
    if (norms) (*norms)[k] = n;
  }
  return out;
}

QuantizeResult fill_result(const Matrix& features, const Codebook& cb, const Matrix& unit_codes,
                           const std::vector<double>& code_norms,
                           std::span<const std::uint32_t> indices) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  QuantizeResult q;
  q.indices.assign(indices.begin(), indices.end());
  q.normed_features = Matrix(n, d);
  q.normed_codes = Matrix(n, d);
  q.feature_norms.resize(n);
  q.code_norms.resize(n);
  q.assignment_counts.assign(cb.size(), 0);
  q.token_total = n;
  for (std::size_t t = 0; t < n; ++t) {
    const std::uint32_t k = indices[t];
    require(k < cb.size(), ErrorKind::InvalidArgument, "code index out of range");
    q.feature_norms[t] = l2_normalize_into(features.row(t), q.normed_features.row(t));
    auto src = unit_codes.row(k);
    std::copy(src.begin(), src.end(), q.normed_codes.row(t).begin());
    q.code_norms[t] = code_norms[k];
    ++q.assignment_counts[k];
  }
  return q;
}

}  // namespace

QuantizeResult quantize(const Matrix& features, const Codebook& cb) {
  require(features.cols() == cb.dim(), ErrorKind::DimensionMismatch,
          "features have dimension " + std::to_string(features.cols()) + ", codebook " +
              std::to_string(cb.dim()));
  std::vector<double> code_norms;
  const Matrix unit_codes = normalized_codes(cb, &code_norms);
  const auto& kt = kern::active();

  const std::size_t k = cb.size();
  std::vector<std::uint32_t> indices(features.rows());
  std::vector<double> unit(features.cols());
  std::vector<double> scores(k);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    l2_normalize_into(features.row(t), unit);
    kt.gemv(unit_codes.data(), k, unit_codes.cols(), unit.data(), scores.data());
    std::uint32_t best = 0;
    for (std::uint32_t j = 1; j < k; ++j) {
      if (scores[j] > scores[best]) best = j;
    }
    indices[t] = best;
  }
  return fill_result(features, cb, unit_codes, code_norms, indices);
}

QuantizeResult quantize_with_indices(const Matrix& features, const Codebook& cb,
                                     std::span<const std::uint32_t> indices) {
  require(features.cols() == cb.dim(), ErrorKind::DimensionMismatch, "feature/codebook dimension mismatch");
  require(indices.size() == features.rows(), ErrorKind::DimensionMismatch, "one index per token required");
  std::vector<double> code_norms;
  const Matrix unit_codes = normalized_codes(cb, &code_norms);
  return fill_result(features, cb, unit_codes, code_norms, indices);
}

VqLoss vq_loss(const QuantizeResult& q) {
  const std::size_t n = q.indices.size();
  const std::size_t d = q.normed_features.cols();
  VqLoss out;
  out.grad_features = Matrix(n, d);
  out.grad_codes = Matrix(q.code_count(), d);
  std::vector<double> g(d), gx(d);
  for (std::size_t t = 0; t < n; ++t) {
    auto e = q.normed_features.row(t);
    auto v = q.normed_codes.row(t);
    const double dist = kern::squared_distance(e, v);
    // Both terms have the same value; they differ only in where the gradient goes.
    out.value += 2.0 * dist;

    for (std::size_t j = 0; j < d; ++j) g[j] = 2.0 * (e[j] - v[j]);
    normalize_backward(e, q.feature_norms[t], g, out.grad_features.row(t));

    for (std::size_t j = 0; j < d; ++j) g[j] = 2.0 * (v[j] - e[j]);
    normalize_backward(v, q.code_norms[t], g, gx);
    kern::axpy(1.0, gx, out.grad_codes.row(q.indices[t]));
  }
  return out;
}

void update_usage(Codebook& cb, const QuantizeResult& q, double gamma) {
  require(gamma > 0.0 && gamma < 1.0, ErrorKind::InvalidArgument, "gamma must lie in (0,1)");
  require(q.token_total > 0, ErrorKind::InvalidArgument, "update_usage: empty batch");
  require(q.code_count() == cb.size(), ErrorKind::DimensionMismatch, "assignment counts do not match K");
  const double total = static_cast<double>(q.token_total);
  for (std::size_t k = 0; k < cb.size(); ++k) {
    const double frac = static_cast<double>(q.assignment_counts[k]) / total;
    cb.usage[k] = std::clamp(gamma * cb.usage[k] + (1.0 - gamma) * frac, 0.0, 1.0);
  }
}

double reinit_factor(double usage, std::size_t code_count, double gamma) {
  const double a = std::exp(-usage * static_cast<double>(code_count) * 10.0 / (1.0 - gamma));
  return std::clamp(a, 0.0, 1.0);
}

ReinitReport reinit_codes(Codebook& cb, const QuantizeResult& q, double gamma) {
  require(q.token_total > 0, ErrorKind::InvalidArgument, "reinit_codes: empty batch");
  require(q.code_count() == cb.size(), ErrorKind::DimensionMismatch, "assignment counts do not match K");
  const std::size_t k_count = cb.size();
  const std::size_t d = cb.dim();
  const std::size_t n = q.indices.size();

  Matrix centroid(k_count, d);
  for (std::size_t t = 0; t < n; ++t) kern::axpy(1.0, q.normed_features.row(t), centroid.row(q.indices[t]));

  ReinitReport rep;
  rep.alphas.resize(k_count);
  rep.anchors.assign(k_count, std::numeric_limits<std::uint32_t>::max());
  std::vector<double> unit(d);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double alpha = reinit_factor(cb.usage[k], k_count, gamma);
    rep.alphas[k] = alpha;
    if (alpha == 0.0) continue;

    auto c = centroid.row(k);
    if (q.assignment_counts[k] > 0) {
      const double inv = 1.0 / static_cast<double>(q.assignment_counts[k]);
      for (double& x : c) x *= inv;
    } else {
      l2_normalize_into(cb.codes.row(k), unit);
      std::size_t best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < n; ++t) {
        const double s = kern::dot(unit, q.normed_features.row(t));
        if (s > best_sim) {
          best_sim = s;
          best = t;
        }
      }
      rep.anchors[k] = static_cast<std::uint32_t>(best);
      auto a = q.normed_features.row(best);
      std::copy(a.begin(), a.end(), c.begin());
    }
    auto v = cb.codes.row(k);
    for (std::size_t j = 0; j < d; ++j) v[j] = (1.0 - alpha) * v[j] + alpha * c[j];
  }
  return rep;
}

ContrastiveLoss contrastive_loss(const Codebook& cb, const QuantizeResult& q, double tau,
                                 std::size_t max_negatives, std::uint64_t seed) {
  require(tau > 0.0, ErrorKind::InvalidArgument, "temperature must be positive");
  require(q.code_count() == cb.size(), ErrorKind::DimensionMismatch, "assignment counts do not match K");
  const std::size_t n = q.indices.size();
  const std::size_t d = cb.dim();
  const std::size_t k_count = cb.size();

  ContrastiveLoss out;
  out.grad_features = Matrix(n, d);
  out.grad_codes = Matrix(k_count, d);
  if (n == 0) return out;

  std::vector<double> code_norms;
  const Matrix unit_codes = normalized_codes(cb, &code_norms);

  // sim(k, j) for every code that owns at least one token.
  Matrix sim(k_count, n);
  const auto& kt = kern::active();
  for (std::size_t k = 0; k < k_count; ++k) {
    if (q.assignment_counts[k] == 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      sim(k, j) = kt.dot(unit_codes.row(k).data(), q.normed_features.row(j).data(), d);
    }
  }

  Matrix dsim(k_count, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<std::size_t> candidates;
  std::vector<double> logits;
  for (std::size_t t = 0; t < n; ++t) {
    const std::uint32_t k = q.indices[t];
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (q.indices[j] != k) candidates.push_back(j);
    }
    if (candidates.empty()) continue;
    if (candidates.size() > max_negatives) {
      Rng rng(derive_seed(seed, {t}));
      auto pick = rng.sample_without_replacement(candidates.size(), max_negatives);
      std::sort(pick.begin(), pick.end());
      for (std::size_t i = 0; i < pick.size(); ++i) candidates[i] = candidates[pick[i]];
      candidates.resize(max_negatives);
    }
    if (candidates.empty()) continue;
    ++out.contributing_tokens;

    logits.resize(candidates.size() + 1);
    logits[0] = sim(k, t) / tau;
    double mx = logits[0];
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      logits[i + 1] = sim(k, candidates[i]) / tau;
      mx = std::max(mx, logits[i + 1]);
    }
    double z = 0.0;
    for (double a : logits) z += std::exp(a - mx);
    const double lse = mx + std::log(z);
    out.value += (lse - logits[0]) * inv_n;

    dsim(k, t) += (std::exp(logits[0] - lse) - 1.0) / tau * inv_n;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      dsim(k, candidates[i]) += std::exp(logits[i + 1] - lse) / tau * inv_n;
    }
  }

  Matrix dunit_codes(k_count, d);
  Matrix dunit_feat(n, d);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (q.assignment_counts[k] == 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dsim(k, j);
      if (g == 0.0) continue;
      kern::axpy(g, q.normed_features.row(j), dunit_codes.row(k));
      kern::axpy(g, unit_codes.row(k), dunit_feat.row(j));
    }
  }
  for (std::size_t k = 0; k < k_count; ++k) {
    normalize_backward(unit_codes.row(k), code_norms[k], dunit_codes.row(k), out.grad_codes.row(k));
  }
  for (std::size_t j = 0; j < n; ++j) {
    normalize_backward(q.normed_features.row(j), q.feature_norms[j], dunit_feat.row(j),
                       out.grad_features.row(j));
  }
  return out;
}

}  // namespace cpt
