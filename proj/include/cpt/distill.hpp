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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpt/matrix.hpp"

namespace cpt {

struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

/// -sum_t cos(o_t, teacher_t). Negated so that minimizing aligns the rows;
/// the teacher is a constant. Gradient is w.r.t. o.
LossWithGrad alignment_loss(const Matrix& o, const Matrix& teacher);

/// lambda * sum_t |l2(e_t) - l2(frozen_t)|^2, gradient w.r.t. e.
LossWithGrad tokenizer_reg_loss(const Matrix& e, const Matrix& frozen, double lambda_reg);

inline double tokenizer_total_loss(double l1, double l2, double l3) { return l1 + l2 + l3; }

/// Outputs of one masked-prediction forward pass over a clip.
struct ModelBatchOutputs {
  Matrix logits;                         // |M| x K, row i belongs to mask[i]
  std::vector<std::uint32_t> targets;    // |M|
  std::vector<std::size_t> mask;         // masked positions, ascending
  Matrix student_reps;                   // T x D
  Matrix frozen_reps;                    // T x D
};

struct MamLoss {
  double value = 0.0;
  double cross_entropy = 0.0;
  double distillation = 0.0;  // already multiplied by mu_reg
  Matrix grad_logits;         // |M| x K
  Matrix grad_reps;           // T x D
};

/// sum_{t in M} -log softmax(logits_t)[z_t]
///   + mu_reg * sum_{t=1..T} |l2(r_t) - l2(frozen_r_t)|^2
/// The distillation term runs over every position, masked or not.
MamLoss mam_loss(const ModelBatchOutputs& m, double mu_reg);

}  // namespace cpt
