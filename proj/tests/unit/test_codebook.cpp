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

#include <cmath>
#include <numeric>

#include "cpt/codebook.hpp"
#include "cpt/kernels.hpp"
#include "cpt/error.hpp"
#include "cpt/rng.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace cpt;
using testing::check_gradient;
using testing::random_matrix;

namespace {

Codebook random_codebook(std::size_t k, std::size_t d, Rng& rng) {
  Codebook cb;
  cb.codes = random_matrix(k, d, rng);
  cb.usage.assign(k, 0.0);
  return cb;
}

double sq_unit_distance(std::span<const double> x, std::span<const double> unit_target) {
  double n = 0.0;
  for (double v : x) n += v * v;
  n = std::sqrt(n);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] / n - unit_target[i]) * (x[i] / n - unit_target[i]);
  return s;
}

}  // namespace

TEST_CASE("l2_normalize") {
  const std::vector<double> v{3.0, 4.0};
  const auto u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));
  const auto uu = l2_normalize(u);
  CHECK(std::abs(uu[0] - u[0]) < 1e-15);
  CHECK(std::abs(uu[1] - u[1]) < 1e-15);
  try {
    l2_normalize(std::vector<double>{0.0, 0.0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVector);
  }
}

TEST_CASE("quantize: single code, colinear feature, dimension mismatch") {
  Rng rng(1);
  Codebook one = random_codebook(1, 3, rng);
  const Matrix x = random_matrix(7, 3, rng);
  const auto q1 = quantize(x, one);
  for (auto i : q1.indices) CHECK(i == 0);
  CHECK(q1.assignment_counts[0] == 7);
  CHECK(q1.token_total == 7);

  Codebook cb = random_codebook(5, 3, rng);
  Matrix e(1, 3);
  for (std::size_t j = 0; j < 3; ++j) e(0, j) = 2.5 * cb.codes(3, j);
  const auto q = quantize(e, cb);
  CHECK(q.indices[0] == 3);
  CHECK(kern::squared_distance(q.normed_features.row(0), q.normed_codes.row(0)) < 1e-30);

  CHECK_THROWS_AS(quantize(random_matrix(2, 4, rng), cb), Error);
}

TEST_CASE("quantize ties go to the lowest index") {
  Codebook cb;
  cb.codes = Matrix(3, 2);
  cb.codes(0, 0) = 0.0, cb.codes(0, 1) = 1.0;
  cb.codes(1, 0) = 1.0, cb.codes(1, 1) = 0.0;
  cb.codes(2, 0) = 2.0, cb.codes(2, 1) = 0.0;
  cb.usage.assign(3, 0.0);
  Matrix e(1, 2);
  e(0, 0) = 1.0;
  CHECK(quantize(e, cb).indices[0] == 1);
}

TEST_CASE("quantize equals the exhaustive cosine oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t k = 1 + rng.below(64), d = 1 + rng.below(8), t = 1 + rng.below(64);
    const Codebook cb = random_codebook(k, d, rng);
    const Matrix e = random_matrix(t, d, rng);
    const auto q = quantize(e, cb);
    const Matrix cos = testing::oracle_cosines(e, cb.codes);
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < t; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (cos(i, j) > cos(i, best)) best = j;
      }
      if (q.indices[i] != best) CHECK(std::abs(cos(i, q.indices[i]) - cos(i, best)) < 1e-12);
    }
    for (auto c : q.assignment_counts) total += c;
    CHECK(total == q.token_total);
  }
}

TEST_CASE("vq_loss values") {
  Codebook cb;
  cb.codes = Matrix(1, 2);
  cb.codes(0, 1) = 1.0;
  cb.usage = {0.0};
  Matrix e(1, 2);
  e(0, 0) = 1.0;
  CHECK(vq_loss(quantize(e, cb)).value == doctest::Approx(4.0));
  Matrix same(1, 2);
  same(0, 1) = 3.0;
  CHECK(vq_loss(quantize(same, cb)).value == doctest::Approx(0.0));
}

TEST_CASE("vq_loss gradients match finite differences on both paths") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const std::size_t k = 2 + rng.below(6), d = 2 + rng.below(5), t = 1 + rng.below(12);
    Codebook cb = random_codebook(k, d, rng);
    Matrix e = random_matrix(t, d, rng);
    const auto q = quantize(e, cb);
    const VqLoss loss = vq_loss(q);

    // Commitment path: codes held constant.
    auto commit = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < t; ++i) s += sq_unit_distance(e.row(i), q.normed_codes.row(i));
      return s;
    };
    const auto ge = check_gradient(e.flat(), loss.grad_features.flat(), commit);
    CHECK(ge.max_rel_error <= 1e-4);

    // Codebook path: features held constant.
    auto codebook_term = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < t; ++i) s += sq_unit_distance(cb.codes.row(q.indices[i]), q.normed_features.row(i));
      return s;
    };
    const auto gv = check_gradient(cb.codes.flat(), loss.grad_codes.flat(), codebook_term);
    CHECK(gv.max_rel_error <= 1e-4);
  }
}

TEST_CASE("straight-through: downstream gradient equals identity-backward through normalization") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const std::size_t k = 3, d = 4, t = 5;
    const Codebook cb = random_codebook(k, d, rng);
    Matrix e = random_matrix(t, d, rng);
    const Matrix w = random_matrix(t, d, rng);
    const auto q = quantize(e, cb);
    // Quantized output carries the code values with an offset frozen at this point.
    Matrix offset = q.normed_codes;
    for (std::size_t i = 0; i < offset.size(); ++i) offset.flat()[i] -= q.normed_features.flat()[i];
    auto downstream = [&](const Matrix& qv) {
      double s = 0.0;
      for (std::size_t i = 0; i < qv.size(); ++i) s += w.flat()[i] * qv.flat()[i] + 0.5 * qv.flat()[i] * qv.flat()[i];
      return s;
    };
    auto objective = [&] {
      Matrix qv(t, d);
      for (std::size_t i = 0; i < t; ++i) {
        const auto u = l2_normalize(e.row(i));
        for (std::size_t j = 0; j < d; ++j) qv(i, j) = u[j] + offset(i, j);
      }
      return downstream(qv);
    };
    Matrix grad(t, d);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> g(d);
      for (std::size_t j = 0; j < d; ++j) g[j] = w(i, j) + q.normed_codes(i, j);
      normalize_backward(q.normed_features.row(i), q.feature_norms[i], g, grad.row(i));
    }
    CHECK(objective() == doctest::Approx(downstream(q.normed_codes)).epsilon(1e-12));
    CHECK(check_gradient(e.flat(), grad.flat(), objective).max_rel_error <= 1e-4);
  }
}

TEST_CASE("update_usage: direct evaluation, fixed point, mass conservation") {
  Codebook cb;
  cb.codes = Matrix(3, 2, 1.0);
  cb.usage.assign(3, 0.0);
  QuantizeResult q;
  q.assignment_counts = {5, 0, 0};
  q.token_total = 5;
  update_usage(cb, q, 0.9);
  CHECK(cb.usage[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(cb.usage[1] == 0.0);

  q.assignment_counts = {1, 3, 1};
  for (int i = 0; i < 200; ++i) {
    const auto before = cb.usage;
    update_usage(cb, q, 0.9);
    double mass = 0.0;
    for (std::size_t k = 0; k < 3; ++k) mass += cb.usage[k] - 0.9 * before[k];
    CHECK(std::abs(mass - 0.1) < 1e-9);
  }
  CHECK(std::abs(cb.usage[0] - 0.2) < 1e-6);
  CHECK(std::abs(cb.usage[1] - 0.6) < 1e-6);

  q.token_total = 0;
  CHECK_THROWS_AS(update_usage(cb, q, 0.9), Error);
  q.token_total = 5;
  CHECK_THROWS_AS(update_usage(cb, q, 1.0), Error);
}

TEST_CASE("reinit factor and limits") {
  CHECK(reinit_factor(0.0, 64, 0.9) == 1.0);
  CHECK(reinit_factor(0.01, 4, 0.9) == doctest::Approx(std::exp(-4.0)).epsilon(1e-14));
  CHECK(reinit_factor(1.0 / 64.0, 64, 0.9) < 1e-12);

  Rng rng(9);
  Codebook cb = random_codebook(4, 3, rng);
  cb.usage = {0.01, 0.0, 0.9, 0.0};
  const Matrix e = random_matrix(12, 3, rng);
  const auto q = quantize_with_indices(e, cb, std::vector<std::uint32_t>{0, 0, 0, 2, 2, 2, 2, 2, 2, 2, 2, 1});
  const Codebook before = cb;
  const auto rep = reinit_codes(cb, q, 0.9);

  // Code 0: partial pull toward the mean of its normalized features.
  const double a0 = std::exp(-0.01 * 4 * 10 / 0.1);
  CHECK(rep.alphas[0] == doctest::Approx(a0).epsilon(1e-14));
  for (std::size_t j = 0; j < 3; ++j) {
    const double mean = (q.normed_features(0, j) + q.normed_features(1, j) + q.normed_features(2, j)) / 3.0;
    CHECK(cb.codes(0, j) == doctest::Approx((1 - a0) * before.codes(0, j) + a0 * mean).epsilon(1e-13));
  }
  // Code 1: unused history, a single assigned token -> lands exactly on it.
  for (std::size_t j = 0; j < 3; ++j) CHECK(cb.codes(1, j) == q.normed_features(11, j));
  // Code 2: heavily used -> does not move.
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(cb.codes(2, j) - before.codes(2, j)) < 1e-12);
  // Code 3: nothing assigned -> the most similar normalized feature.
  const Matrix cos = testing::oracle_cosines(e, before.codes);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 12; ++i) {
    if (cos(i, 3) > cos(best, 3)) best = i;
  }
  CHECK(rep.anchors[3] == best);
  for (std::size_t j = 0; j < 3; ++j) CHECK(cb.codes(3, j) == q.normed_features(best, j));
}

TEST_CASE("reinit moves every code along the segment toward its centroid") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t k = 2 + rng.below(10), d = 2 + rng.below(4);
    Codebook cb = random_codebook(k, d, rng);
    for (double& u : cb.usage) u = rng.uniform(0.0, 0.05);
    const Matrix e = random_matrix(20, d, rng);
    const auto q = quantize(e, cb);
    const Codebook before = cb;
    const auto rep = reinit_codes(cb, q, 0.9);
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> target(d, 0.0);
      if (q.assignment_counts[c] > 0) {
        for (std::size_t t = 0; t < 20; ++t) {
          if (q.indices[t] != c) continue;
          for (std::size_t j = 0; j < d; ++j) target[j] += q.normed_features(t, j) / q.assignment_counts[c];
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) target[j] = q.normed_features(rep.anchors[c], j);
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double expect = (1 - rep.alphas[c]) * before.codes(c, j) + rep.alphas[c] * target[j];
        CHECK(std::abs(cb.codes(c, j) - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("contrastive loss closed forms") {
  // Code 0 at (1,0); token 0 assigned to it, token 1 assigned to code 1.
  Codebook cb;
  cb.codes = Matrix(2, 2);
  cb.codes(0, 0) = 1.0;
  cb.codes(1, 1) = 1.0;
  cb.usage = {0.0, 0.0};
  SUBCASE("equal similarities give ln 2 for any temperature") {
    const Matrix e(2, 2, 1.0);
    for (double tau : {0.1, 0.3, 2.0}) {
      const auto q = quantize_with_indices(e, cb, std::vector<std::uint32_t>{0, 1});
      const auto c = contrastive_loss(cb, q, tau, 256, 1);
      CHECK(c.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }
  SUBCASE("positive 1 and negative -1") {
    Matrix e(2, 2);
    e(0, 0) = 1.0;
    e(1, 0) = -1.0;
    Codebook one;
    one.codes = Matrix(2, 2);
    one.codes(0, 0) = 1.0;
    one.codes(1, 0) = -1.0;
    one.usage = {0.0, 0.0};
    const auto q = quantize_with_indices(e, one, std::vector<std::uint32_t>{0, 1});
    const auto c = contrastive_loss(one, q, 0.3, 256, 1);
    CHECK(c.value == doctest::Approx(std::log1p(std::exp(-2.0 / 0.3))).epsilon(1e-12));
    CHECK(c.value == doctest::Approx(1.272e-3).epsilon(1e-3));
  }
  SUBCASE("no negatives contributes zero") {
    Matrix e(3, 2, 1.0);
    const auto q = quantize_with_indices(e, cb, std::vector<std::uint32_t>{0, 0, 0});
    const auto c = contrastive_loss(cb, q, 0.3, 256, 1);
    CHECK(c.value == 0.0);
    CHECK(c.contributing_tokens == 0);
  }
  CHECK(codebook_total_loss(1.0, 0.5, 10.0) == 6.0);
  CHECK(codebook_total_loss(1.5, 0.5, 0.0) == 1.5);
}

TEST_CASE("contrastive gradients match finite differences, with and without subsampling") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const std::size_t k = 2 + rng.below(5), d = 2 + rng.below(4), t = 4 + rng.below(12);
    Codebook cb = random_codebook(k, d, rng);
    Matrix e = random_matrix(t, d, rng);
    const auto idx = quantize(e, cb).indices;
    const std::size_t cap = seed % 2 == 0 ? 256 : 2;
    const double tau = 0.3;
    const auto c = contrastive_loss(cb, quantize_with_indices(e, cb, idx), tau, cap, seed);
    auto f = [&] { return contrastive_loss(cb, quantize_with_indices(e, cb, idx), tau, cap, seed).value; };
    CHECK(check_gradient(e.flat(), c.grad_features.flat(), f).max_rel_error <= 1e-4);
    CHECK(check_gradient(cb.codes.flat(), c.grad_codes.flat(), f).max_rel_error <= 1e-4);
  }
}
