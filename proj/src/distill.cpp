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

#include "cpt/distill.hpp"

#include <cmath>
#include <string>

#include "cpt/codebook.hpp"
#include "cpt/error.hpp"
#include "cpt/kernels.hpp"

namespace cpt {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::DimensionMismatch,
          std::string(what) + ": shapes differ");
}

// sum_t |l2(a_t) - l2(b_t)|^2 and its gradient w.r.t. a, scaled by `weight`.
double normalized_distance_sum(const Matrix& a, const Matrix& b, double weight, Matrix& grad) {
  const std::size_t d = a.cols();
  std::vector<double> ua(d), ub(d), g(d);
  grad = Matrix(a.rows(), d);
  if (weight == 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < a.rows(); ++t) {
    const double na = l2_normalize_into(a.row(t), ua);
    l2_normalize_into(b.row(t), ub);
    sum += kern::squared_distance(ua, ub);
    for (std::size_t j = 0; j < d; ++j) g[j] = 2.0 * weight * (ua[j] - ub[j]);
    normalize_backward(ua, na, g, grad.row(t));
  }
  return weight * sum;
}

}  // namespace

LossWithGrad alignment_loss(const Matrix& o, const Matrix& teacher) {
  require_same_shape(o, teacher, "alignment_loss");
  const std::size_t d = o.cols();
  LossWithGrad out;
  out.grad = Matrix(o.rows(), d);
  std::vector<double> uo(d), ut(d), g(d);
  for (std::size_t t = 0; t < o.rows(); ++t) {
    const double no = l2_normalize_into(o.row(t), uo);
    l2_normalize_into(teacher.row(t), ut);
    out.value -= kern::dot(uo, ut);
    for (std::size_t j = 0; j < d; ++j) g[j] = -ut[j];
    normalize_backward(uo, no, g, out.grad.row(t));
  }
  return out;
}

LossWithGrad tokenizer_reg_loss(const Matrix& e, const Matrix& frozen, double lambda_reg) {
  require_same_shape(e, frozen, "tokenizer_reg_loss");
  require(lambda_reg >= 0.0, ErrorKind::InvalidArgument, "lambda_reg must be non-negative");
  LossWithGrad out;
  out.value = normalized_distance_sum(e, frozen, lambda_reg, out.grad);
  return out;
}

MamLoss mam_loss(const ModelBatchOutputs& m, double mu_reg) {
  require(mu_reg >= 0.0, ErrorKind::InvalidArgument, "mu_reg must be non-negative");
  require(m.logits.rows() == m.targets.size() && m.mask.size() == m.targets.size(),
          ErrorKind::DimensionMismatch, "mam_loss: one logit row and target per masked position");
  require_same_shape(m.student_reps, m.frozen_reps, "mam_loss");
  const std::size_t k = m.logits.cols();

  MamLoss out;
  out.grad_logits = Matrix(m.logits.rows(), k);
  for (std::size_t i = 0; i < m.targets.size(); ++i) {
    require(m.targets[i] < k, ErrorKind::InvalidArgument,
            "target " + std::to_string(m.targets[i]) + " out of range for K=" + std::to_string(k));
    require(m.mask[i] < m.student_reps.rows(), ErrorKind::InvalidArgument, "mask position out of range");
    auto row = m.logits.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    out.cross_entropy += lse - row[m.targets[i]];
    auto g = out.grad_logits.row(i);
    for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(row[j] - lse);
    g[m.targets[i]] -= 1.0;
  }
  out.distillation = normalized_distance_sum(m.student_reps, m.frozen_reps, mu_reg, out.grad_reps);
  out.value = out.cross_entropy + out.distillation;
  return out;
}

}  // namespace cpt
