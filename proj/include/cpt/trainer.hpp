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

#include "cpt/adam.hpp"
#include "cpt/codebook.hpp"
#include "cpt/config.hpp"
#include "cpt/corpus.hpp"
#include "cpt/encoder.hpp"

namespace cpt {

/// Tokenizer encoder (features -> e_t), estimator (quantized -> o_t) and codebook.
struct TokenizerParts {
  ToyNet encoder;
  ToyNet estimator;
  Codebook codebook;

  std::size_t param_count() const {
    return encoder.param_count() + estimator.param_count() + codebook.codes.size();
  }
  friend bool operator==(const TokenizerParts&, const TokenizerParts&) = default;
};

/// Masked-prediction encoder (features -> r_t) and its K-way prediction head.
struct ModelParts {
  ToyNet encoder;
  LinearHead head;

  std::size_t param_count() const { return encoder.param_count() + head.params().size(); }
  friend bool operator==(const ModelParts&, const ModelParts&) = default;
};

/// A stage that has started but not finished; kept so that a run can be
/// checkpointed mid-stage and resumed bit-exactly.
struct StageProgress {
  Snapshot snapshot;
  CorpusPool dataset;
  std::uint32_t stage = 0;
  bool base = false;
  std::size_t tokenizer_epochs_done = 0;
  std::size_t model_epochs_done = 0;
};

struct WorkbenchState {
  TokenizerParts tokenizer;
  ModelParts model;
  AdamState tokenizer_adam;
  AdamState model_adam;
  CorpusPool adaptive;
  std::uint32_t stage = 0;   // index of the last completed stage (0 = base)
  bool base_done = false;
  std::optional<StageProgress> pending;

  /// Fresh parameters drawn from the config seed.
  static WorkbenchState initialize(const TrainConfig& cfg);
};

/// One line of a stage report: "stage=1 phase=model epoch=3 batch=7 name=ce value=...".
/// Epoch-level summaries use batch = -1, stage-level ones epoch = batch = -1.
struct MetricRecord {
  std::uint32_t stage = 0;
  std::string phase;
  std::int64_t epoch = -1;
  std::int64_t batch = -1;
  std::string name;
  double value = 0.0;
};

std::string format_record(const MetricRecord& r);
void write_records(std::ostream& out, std::span<const MetricRecord> records);

// ---------------------------------------------------------------------------
// Per-batch objectives

/// Assignment and straight-through offsets frozen at a reference point, so the
/// tokenizer objective becomes a smooth function of the parameters.
struct FrozenAssignment {
  std::vector<std::uint32_t> indices;
  Matrix st_offsets;  // l2(v_z) - l2(e) per token at the reference point
};

struct TokenizerBatchResult {
  double l1 = 0.0;      // alignment
  double l2 = 0.0;      // vector quantization
  double l3 = 0.0;      // regularization (weighted)
  double contra = 0.0;  // contrastive, unweighted
  double total = 0.0;   // l1 + l2 + l3 + lambda_contra * contra
  std::vector<double> grad;  // [encoder | estimator | codes]
  QuantizeResult quantized;
};

/// Teacher outputs and previous-encoder outputs for one clip.
struct TokenizerTargets {
  Matrix teacher;        // snapshot model encoder, unmasked
  Matrix frozen_encoder; // snapshot tokenizer encoder
};

TokenizerTargets tokenizer_targets(const Snapshot& snap, const Matrix& features);

/// L_codebook on a batch with its gradient. `frozen`, when given, fixes the
/// code assignment and the straight-through offsets.
TokenizerBatchResult tokenizer_objective(const TokenizerParts& parts, std::span<const Matrix* const> features,
                                         std::span<const TokenizerTargets* const> targets,
                                         const TrainConfig& cfg, std::uint64_t negative_seed,
                                         const FrozenAssignment* frozen = nullptr);

/// Freezes assignment and straight-through offsets at the current parameters.
FrozenAssignment freeze_assignment(const TokenizerParts& parts, std::span<const Matrix* const> features);

struct ModelBatchResult {
  double ce = 0.0;
  double distill = 0.0;  // weighted by mu_reg
  double total = 0.0;
  std::vector<double> grad;  // [encoder | head]
  std::size_t masked_tokens = 0;
};

/// L_MAM on a batch. `targets[i]` holds a code index per token of clip i.
ModelBatchResult model_objective(const ModelParts& parts, const ToyNet& frozen_model,
                                 std::span<const Matrix* const> features,
                                 std::span<const std::vector<std::uint32_t>* const> targets,
                                 std::span<const MaskPlan> plans, double mu_reg);

// ---------------------------------------------------------------------------
// Phases and stages

/// Trains encoder, estimator and codebook for epochs [epoch_begin, epoch_end).
void train_tokenizer_phase(TokenizerParts& parts, AdamState& adam, const Snapshot& snap,
                           const CorpusPool& dataset, const TrainConfig& cfg, std::uint32_t stage,
                           std::size_t epoch_begin, std::size_t epoch_end, std::vector<MetricRecord>& log);

/// Code index of every token of every clip under the given tokenizer.
std::vector<std::vector<std::uint32_t>> quantize_targets(const TokenizerParts& parts, const CorpusPool& dataset);

/// Trains the model encoder and head for epochs [epoch_begin, epoch_end).
void train_model_phase(ModelParts& parts, AdamState& adam, const Snapshot& snap, const CorpusPool& dataset,
                       const std::vector<std::vector<std::uint32_t>>& targets, const TrainConfig& cfg,
                       std::uint32_t stage, std::size_t epoch_begin, std::size_t epoch_end,
                       std::vector<MetricRecord>& log);

struct StageReport {
  std::uint32_t stage = 0;
  bool completed = false;
  std::size_t dataset_size = 0;
  std::size_t adaptive_size = 0;
  double codebook_utilization = 0.0;
  double codebook_perplexity = 0.0;
  double encoder_drift = 0.0;  // mean |l2(e) - l2(e_frozen)|^2 over dataset tokens
  double model_drift = 0.0;    // same for model representations
  std::vector<MetricRecord> log;
};

/// Opens the base stage: snapshot of the current (initial) parameters,
/// dataset = general pool, distillation weights forced to zero.
void begin_base_stage(WorkbenchState& state, const CorpusPool& general_pool);

/// Opens a continual stage: snapshot, then the domain-adaptive dataset (or the
/// raw domain pool when sampling is ablated).
void begin_adapt_stage(WorkbenchState& state, const CorpusPool& domain_pool, const CorpusPool& general_pool,
                       const TrainConfig& cfg);

/// Runs at most `max_epochs` epochs (tokenizer epochs first, then model
/// epochs) of the pending stage. When the last epoch completes, the stage is
/// closed: the dataset joins the adaptive pool (continual stages only) and the
/// report gets its summary. Returns the report of what ran.
StageReport run_pending_stage(WorkbenchState& state, const TrainConfig& cfg,
                              std::size_t max_epochs = static_cast<std::size_t>(-1));

/// Base pre-training on the general pool.
StageReport pretrain_base(WorkbenchState& state, const CorpusPool& general_pool, const TrainConfig& cfg);

/// One continual adaptation stage on a new domain.
StageReport continual_adapt(WorkbenchState& state, const CorpusPool& domain_pool, const CorpusPool& general_pool,
                            const TrainConfig& cfg);

/// Config actually used for a stage: dcpt resolved, zero distillation at base.
TrainConfig stage_config(const TrainConfig& cfg, bool base);

}  // namespace cpt
