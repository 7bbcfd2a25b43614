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

using LabelSet = std::vector<std::uint32_t>;

/// (baseline - current) / baseline * 100. Unrounded; round for display only.
double forgetting_rate(double map_baseline, double map_current);

/// Half-away-from-zero rounding to `decimals` places.
double round_to(double value, int decimals);

/// Precision averaged at the rank of every positive. Ranking is a stable sort
/// by descending score, so ties keep input order. Result in [0, 1].
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> relevant);

/// Macro average of per-class AP over classes with at least one positive,
/// in percent. `scores` is clips x classes.
double mean_average_precision(const Matrix& scores, std::span<const LabelSet> labels);

/// Macro F1 in percent over every class that is predicted or present.
double macro_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> labels);

struct CodebookHealth {
  double utilization = 0.0;  // fraction of codes with at least one assignment
  double perplexity = 0.0;   // exp of the assignment entropy
  std::size_t active_codes = 0;
};

CodebookHealth codebook_health(std::span<const std::uint64_t> assignment_counts);

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeOptions {
  double learning_rate = 0.5;
  std::size_t max_iterations = 500;
  double tolerance = 1e-6;  // stop when the loss changes by less than this
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on standardized features.
class LinearProbe {
 public:
  /// Full-batch gradient descent on the mean cross-entropy against `targets`
  /// (rows are class distributions; multi-hot rows are spread uniformly).
  static LinearProbe fit(const Matrix& features, const Matrix& targets, const ProbeOptions& options);

  /// Class probabilities, one row per input row.
  Matrix predict_proba(const Matrix& features) const;
  std::vector<std::uint32_t> predict(const Matrix& features) const;

  const Matrix& weights() const noexcept { return weights_; }
  std::size_t iterations() const noexcept { return iterations_; }
  double final_loss() const noexcept { return final_loss_; }

  friend bool operator==(const LinearProbe&, const LinearProbe&) = default;

 private:
  std::vector<double> mean_, scale_;
  Matrix weights_;  // classes x (dim + 1), bias last
  std::size_t iterations_ = 0;
  double final_loss_ = 0.0;
};

/// Rows spread uniformly over each clip's label set.
Matrix soft_targets(std::span<const LabelSet> labels, std::size_t class_count);

struct ProbeScores {
  double accuracy = 0.0;  // percent, top-1 prediction inside the label set
  double macro_f1 = 0.0;  // percent
  double map = 0.0;       // percent
};

/// Trains on (train_x, train_labels) and scores the test split.
ProbeScores linear_probe(const Matrix& train_x, std::span<const LabelSet> train_labels, const Matrix& test_x,
                         std::span<const LabelSet> test_labels, std::size_t class_count,
                         const ProbeOptions& options);

}  // namespace cpt
