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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpt/corpus.hpp"
#include "cpt/encoder.hpp"
#include "cpt/metrics.hpp"
#include "cpt/trainer.hpp"

namespace cpt {

/// One row per clip: token mean of the unmasked model-encoder outputs.
Matrix clip_representations(const ToyNet& model_encoder, const CorpusPool& pool);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, first round(train_fraction * n) indices train, the rest test.
/// Both halves are returned in ascending order.
Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed);

struct DomainScore {
  std::string domain;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct EvalReport {
  std::uint32_t stage = 0;
  std::vector<DomainScore> domains;
  double retention_map = 0.0;
  std::optional<double> baseline_map;
  std::optional<double> forgetting_rate;  // unrounded, from the two mAPs above
  double codebook_utilization = 0.0;
  double codebook_perplexity = 0.0;

  /// "metric=<name> domain=<name|-> value=<number>" per line.
  std::string to_text() const;
  static EvalReport from_text(std::string_view text);
  void validate() const;
};

struct EvalOptions {
  double train_fraction = 0.6;
  std::uint64_t seed = 0;
  ProbeOptions probe;
};

/// Probe mAP on the held-out part of a multi-label pool.
double retention_map(const ToyNet& model_encoder, const LabeledPool& pool, const EvalOptions& options);

/// Probe accuracy and macro-F1 on a single-label pool.
DomainScore downstream_score(const ToyNet& model_encoder, const LabeledPool& pool, const EvalOptions& options);

/// Retention, per-domain probes and codebook health for a trained state.
/// When `baseline_map` is given, the report carries the forgetting rate.
EvalReport evaluate(const WorkbenchState& state, const LabeledPool& retention_pool,
                    std::span<const LabeledPool> downstream, const EvalOptions& options,
                    std::optional<double> baseline_map = std::nullopt);

}  // namespace cpt
