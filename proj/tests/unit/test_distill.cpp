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

#include "cpt/distill.hpp"
#include "cpt/error.hpp"
#include "cpt/rng.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace cpt;
using testing::check_gradient;
using testing::random_matrix;

TEST_CASE("alignment loss closed forms") {
  Rng rng(1);
  const Matrix o = random_matrix(6, 4, rng);
  CHECK(alignment_loss(o, o).value == doctest::Approx(-6.0).epsilon(1e-14));
  Matrix a(2, 2), b(2, 2);
  a(0, 0) = 1, a(1, 1) = 2;
  b(0, 1) = 3, b(1, 0) = -1;
  CHECK(std::abs(alignment_loss(a, b).value) < 1e-15);
  CHECK_THROWS_AS(alignment_loss(Matrix(1, 2), b), Error);
}

TEST_CASE("alignment loss is scale invariant per row") {
  Rng rng(2);
  const Matrix o = random_matrix(5, 4, rng);
  const Matrix t = random_matrix(5, 4, rng);
  Matrix scaled = o;
  for (std::size_t i = 0; i < 5; ++i) {
    const double c = 0.1 + 10.0 * rng.uniform();
    for (double& v : scaled.row(i)) v *= c;
  }
  CHECK(std::abs(alignment_loss(scaled, t).value - alignment_loss(o, t).value) < 1e-9);
}

TEST_CASE("alignment and regularization gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix o = random_matrix(5, 4, rng);
    const Matrix t = random_matrix(5, 4, rng);
    const auto a = alignment_loss(o, t);
    CHECK(check_gradient(o.flat(), a.grad.flat(), [&] { return alignment_loss(o, t).value; }).max_rel_error <=
          1e-4);

    Matrix e = random_matrix(6, 3, rng);
    const Matrix f = random_matrix(6, 3, rng);
    const double lambda = seed % 2 == 0 ? 1.0 : 3.5;
    const auto r = tokenizer_reg_loss(e, f, lambda);
    CHECK(check_gradient(e.flat(), r.grad.flat(), [&] { return tokenizer_reg_loss(e, f, lambda).value; })
              .max_rel_error <= 1e-4);
  }
}

TEST_CASE("regularization values") {
  Rng rng(3);
  const Matrix e = random_matrix(4, 3, rng);
  CHECK(tokenizer_reg_loss(e, e, 1e6).value == 0.0);
  Matrix x(1, 2), y(1, 2);
  x(0, 0) = 2.0;
  y(0, 1) = 0.5;
  CHECK(tokenizer_reg_loss(x, y, 1.0).value == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(tokenizer_reg_loss(x, y, 0.0).value == 0.0);
  const Matrix f = random_matrix(4, 3, rng);
  CHECK(tokenizer_reg_loss(e, f, 2.0).value > 0.0);
  CHECK(tokenizer_total_loss(0, 0, 0) == 0.0);
  CHECK(tokenizer_total_loss(-3, 4, 2) == 3.0);
}

namespace {

ModelBatchOutputs random_outputs(Rng& rng, std::size_t t, std::size_t d, std::size_t k) {
  ModelBatchOutputs m;
  m.mask = {};
  for (std::size_t i = 0; i < t; ++i) {
    if (rng.uniform() < 0.6) m.mask.push_back(i);
  }
  if (m.mask.empty()) m.mask.push_back(0);
  m.logits = random_matrix(m.mask.size(), k, rng);
  for (std::size_t i = 0; i < m.mask.size(); ++i) m.targets.push_back(static_cast<std::uint32_t>(rng.below(k)));
  m.student_reps = random_matrix(t, d, rng);
  m.frozen_reps = random_matrix(t, d, rng);
  return m;
}

}  // namespace

TEST_CASE("mam loss closed forms") {
  ModelBatchOutputs m;
  m.mask = {0, 2, 3};
  m.logits = Matrix(3, 4, 0.7);
  m.targets = {0, 3, 1};
  Rng rng(4);
  m.student_reps = random_matrix(5, 2, rng);
  m.frozen_reps = m.student_reps;
  const auto l = mam_loss(m, 1e6);
  CHECK(l.value == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-14));
  CHECK(l.distillation == 0.0);

  for (std::size_t i = 0; i < 3; ++i) m.logits(i, m.targets[i]) = 60.0;
  CHECK(mam_loss(m, 1.0).value < 1e-20);

  m.targets[1] = 4;
  CHECK_THROWS_AS(mam_loss(m, 1.0), Error);
}

TEST_CASE("mam loss: distillation spans every position, softmax shift invariance") {
  Rng rng(5);
  ModelBatchOutputs m = random_outputs(rng, 7, 3, 5);
  m.mask = {1};
  m.logits = random_matrix(1, 5, rng);
  m.targets = {2};
  const auto base = mam_loss(m, 2.0);
  double expect = 0.0;
  for (std::size_t t = 0; t < 7; ++t) {
    std::vector<double> a(m.student_reps.row(t).begin(), m.student_reps.row(t).end());
    std::vector<double> b(m.frozen_reps.row(t).begin(), m.frozen_reps.row(t).end());
    double na = 0, nb = 0;
    for (std::size_t j = 0; j < 3; ++j) na += a[j] * a[j], nb += b[j] * b[j];
    for (std::size_t j = 0; j < 3; ++j) expect += std::pow(a[j] / std::sqrt(na) - b[j] / std::sqrt(nb), 2);
  }
  CHECK(base.distillation == doctest::Approx(2.0 * expect).epsilon(1e-13));

  ModelBatchOutputs shifted = m;
  for (double& v : shifted.logits.flat()) v += 123.0;
  CHECK(std::abs(mam_loss(shifted, 2.0).cross_entropy - base.cross_entropy) < 1e-9);
}

TEST_CASE("mam loss gradients match finite differences on both terms") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(40 + seed);
    ModelBatchOutputs m = random_outputs(rng, 3 + rng.below(6), 3, 2 + rng.below(6));
    const double mu = seed % 3 == 0 ? 0.0 : 0.5 + rng.uniform();
    const auto l = mam_loss(m, mu);
    CHECK(check_gradient(m.logits.flat(), l.grad_logits.flat(), [&] { return mam_loss(m, mu).value; })
              .max_rel_error <= 1e-4);
    CHECK(check_gradient(m.student_reps.flat(), l.grad_reps.flat(), [&] { return mam_loss(m, mu).value; })
              .max_rel_error <= 1e-4);
    CHECK(l.value == doctest::Approx(l.cross_entropy + l.distillation).epsilon(1e-15));
  }
}
