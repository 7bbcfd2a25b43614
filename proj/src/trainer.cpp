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

#include "cpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>

#include "cpt/distill.hpp"
#include "cpt/error.hpp"
#include "cpt/metrics.hpp"
#include "cpt/rng.hpp"
#include "cpt/sampler.hpp"

namespace cpt {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kTokenizerTag = 1;
constexpr std::uint64_t kModelTag = 2;
constexpr std::uint64_t kSamplingTag = 3;
constexpr std::uint64_t kNegativesTag = 4;

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_scaled(Matrix& dst, const Matrix& src, double scale) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

std::vector<double> gather(std::initializer_list<std::span<const double>> parts) {
  std::vector<double> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void scatter(std::span<const double> flat, std::initializer_list<std::span<double>> parts) {
  std::size_t at = 0;
  for (auto p : parts) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), p.size(), p.begin());
    at += p.size();
  }
}

Matrix rows_slice(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data() + begin * m.cols(), count * m.cols(), out.data());
  return out;
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) fail(ErrorKind::NumericalAbort, "non-finite " + what);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint32_t stage, std::uint64_t phase,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {stage, phase, epoch}));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Mean squared distance between row-normalized a and b; zero rows stay zero.
double normalized_drift(const Matrix& a, const Matrix& b, double& sum) {
  std::vector<double> ua(a.cols()), ub(b.cols());
  auto unit = [](std::span<const double> x, std::vector<double>& out) {
    double n = 0.0;
    for (double v : x) n += v * v;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = n >= kMinNorm ? x[i] / n : 0.0;
  };
  double local = 0.0;
  for (std::size_t t = 0; t < a.rows(); ++t) {
    unit(a.row(t), ua);
    unit(b.row(t), ub);
    for (std::size_t i = 0; i < ua.size(); ++i) local += (ua[i] - ub[i]) * (ua[i] - ub[i]);
  }
  sum += local;
  return local;
}

}  // namespace

// ---------------------------------------------------------------------------

WorkbenchState WorkbenchState::initialize(const TrainConfig& cfg_in) {
  const TrainConfig cfg = cfg_in.resolved();
  cfg.validate();
  const NetShape shape{cfg.dim, cfg.hidden, cfg.dim};
  WorkbenchState s;
  s.tokenizer.encoder = ToyNet::uniform_init(shape, derive_seed(cfg.seed, {kInitTag, 1}), cfg.init_scale);
  s.tokenizer.estimator = ToyNet::uniform_init(shape, derive_seed(cfg.seed, {kInitTag, 2}), cfg.init_scale);
  s.tokenizer.codebook =
      Codebook::uniform_init(cfg.codebook_size, cfg.dim, derive_seed(cfg.seed, {kInitTag, 3}), cfg.init_scale);
  s.model.encoder = ToyNet::uniform_init(shape, derive_seed(cfg.seed, {kInitTag, 4}), cfg.init_scale);
  s.model.head =
      LinearHead::uniform_init(cfg.dim, cfg.codebook_size, derive_seed(cfg.seed, {kInitTag, 5}), cfg.init_scale);
  s.tokenizer_adam = AdamState::zeros(s.tokenizer.param_count());
  s.model_adam = AdamState::zeros(s.model.param_count());
  s.adaptive = CorpusPool("adaptive", {}, cfg.dim);
  return s;
}

std::string format_record(const MetricRecord& r) {
  return "stage=" + std::to_string(r.stage) + " phase=" + r.phase + " epoch=" + std::to_string(r.epoch) +
         " batch=" + std::to_string(r.batch) + " name=" + r.name + " value=" + format_value(r.value);
}

void write_records(std::ostream& out, std::span<const MetricRecord> records) {
  for (const auto& r : records) out << format_record(r) << '\n';
}

TrainConfig stage_config(const TrainConfig& cfg, bool base) {
  TrainConfig c = cfg.resolved();
  if (base) {
    c.lambda_reg = 0.0;
    c.mu_reg = 0.0;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Tokenizer objective

TokenizerTargets tokenizer_targets(const Snapshot& snap, const Matrix& features) {
  TokenizerTargets t;
  t.teacher = snap.model_encoder().forward(features).output;
  t.frozen_encoder = snap.tokenizer_encoder().forward(features).output;
  return t;
}

FrozenAssignment freeze_assignment(const TokenizerParts& parts, std::span<const Matrix* const> features) {
  std::size_t n = 0;
  for (const Matrix* f : features) n += f->rows();
  Matrix e(n, parts.codebook.dim());
  std::size_t at = 0;
  for (const Matrix* f : features) {
    const Matrix out = parts.encoder.forward(*f).output;
    std::copy_n(out.data(), out.size(), e.data() + at * e.cols());
    at += out.rows();
  }
  const QuantizeResult q = quantize(e, parts.codebook);
  FrozenAssignment fa;
  fa.indices = q.indices;
  fa.st_offsets = q.normed_codes;
  add_scaled(fa.st_offsets, q.normed_features, -1.0);
  return fa;
}

TokenizerBatchResult tokenizer_objective(const TokenizerParts& parts, std::span<const Matrix* const> features,
                                         std::span<const TokenizerTargets* const> targets, const TrainConfig& cfg,
                                         std::uint64_t negative_seed, const FrozenAssignment* frozen) {
  require(!features.empty() && features.size() == targets.size(), ErrorKind::DimensionMismatch,
          "tokenizer_objective: need one target set per clip");
  const std::size_t d = parts.codebook.dim();
  const std::size_t b = features.size();

  std::vector<ForwardCache> caches(b);
  std::vector<std::size_t> offset(b + 1, 0);
  for (std::size_t i = 0; i < b; ++i) {
    caches[i] = parts.encoder.forward(*features[i]);
    offset[i + 1] = offset[i] + caches[i].output.rows();
  }
  const std::size_t n = offset[b];
  Matrix e(n, d);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(caches[i].output.data(), caches[i].output.size(), e.data() + offset[i] * d);
  }

  TokenizerBatchResult r;
  r.quantized = frozen != nullptr ? quantize_with_indices(e, parts.codebook, frozen->indices)
                                  : quantize(e, parts.codebook);
  const QuantizeResult& q = r.quantized;
  if (frozen != nullptr) {
    require(frozen->st_offsets.rows() == n && frozen->st_offsets.cols() == d, ErrorKind::DimensionMismatch,
            "tokenizer_objective: frozen offsets do not match the batch");
  }

  VqLoss vq = vq_loss(q);
  r.l2 = vq.value;
  Matrix grad_e = std::move(vq.grad_features);
  Matrix grad_v = std::move(vq.grad_codes);

  if (cfg.lambda_reg > 0.0) {
    Matrix frozen_e(n, d);
    for (std::size_t i = 0; i < b; ++i) {
      const Matrix& fe = targets[i]->frozen_encoder;
      require(fe.rows() == features[i]->rows() && fe.cols() == d, ErrorKind::DimensionMismatch,
              "tokenizer_objective: frozen encoder output shape");
      std::copy_n(fe.data(), fe.size(), frozen_e.data() + offset[i] * d);
    }
    const LossWithGrad reg = tokenizer_reg_loss(e, frozen_e, cfg.lambda_reg);
    r.l3 = reg.value;
    add_scaled(grad_e, reg.grad, 1.0);
  }

  if (!cfg.no_contrastive) {
    const ContrastiveLoss c = contrastive_loss(parts.codebook, q, cfg.tau, cfg.max_negatives, negative_seed);
    r.contra = c.value;
    add_scaled(grad_e, c.grad_features, cfg.lambda_contra);
    add_scaled(grad_v, c.grad_codes, cfg.lambda_contra);
  }

  // Alignment through the estimator. Its input carries the code values and,
  // on the backward pass, routes the gradient to l2(e_t).
  std::vector<double> grad_estimator(parts.estimator.param_count(), 0.0);
  std::vector<double> back(d);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t t0 = offset[i], tn = offset[i + 1] - offset[i];
    Matrix input(tn, d);
    for (std::size_t t = 0; t < tn; ++t) {
      auto row = input.row(t);
      if (frozen != nullptr) {
        for (std::size_t j = 0; j < d; ++j) row[j] = q.normed_features(t0 + t, j) + frozen->st_offsets(t0 + t, j);
      } else {
        std::copy_n(q.normed_codes.row(t0 + t).begin(), d, row.begin());
      }
    }
    const ForwardCache est = parts.estimator.forward(input);
    const LossWithGrad align = alignment_loss(est.output, targets[i]->teacher);
    r.l1 += align.value;
    const NetGradients g = parts.estimator.backward(est, align.grad);
    add_into(grad_estimator, g.params);
    for (std::size_t t = 0; t < tn; ++t) {
      normalize_backward(q.normed_features.row(t0 + t), q.feature_norms[t0 + t], g.inputs.row(t), back);
      add_into(grad_e.row(t0 + t), back);
    }
  }

  std::vector<double> grad_encoder(parts.encoder.param_count(), 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const NetGradients g = parts.encoder.backward(caches[i], rows_slice(grad_e, offset[i], offset[i + 1] - offset[i]));
    add_into(grad_encoder, g.params);
  }

  r.total = tokenizer_total_loss(r.l1, r.l2, r.l3) + cfg.lambda_contra * r.contra;
  check_finite(r.total, "tokenizer loss");
  r.grad = gather({grad_encoder, grad_estimator, grad_v.flat()});
  return r;
}

// ---------------------------------------------------------------------------
// Model objective

ModelBatchResult model_objective(const ModelParts& parts, const ToyNet& frozen_model,
                                 std::span<const Matrix* const> features,
                                 std::span<const std::vector<std::uint32_t>* const> targets,
                                 std::span<const MaskPlan> plans, double mu_reg) {
  require(!features.empty() && features.size() == targets.size() && features.size() == plans.size(),
          ErrorKind::DimensionMismatch, "model_objective: need one target list and mask per clip");
  std::vector<double> grad_encoder(parts.encoder.param_count(), 0.0);
  std::vector<double> grad_head(parts.head.params().size(), 0.0);
  ModelBatchResult r;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Matrix& x = *features[i];
    const MaskPlan& plan = plans[i];
    require(targets[i]->size() == x.rows() && plan.tokens == x.rows(), ErrorKind::DimensionMismatch,
            "model_objective: targets or mask do not match clip length");
    const ForwardCache cache = parts.encoder.forward(x, &plan);

    ModelBatchOutputs m;
    m.logits = parts.head.forward(cache.output, plan.positions);
    m.mask = plan.positions;
    m.targets.reserve(plan.positions.size());
    for (std::size_t t : plan.positions) m.targets.push_back((*targets[i])[t]);
    m.student_reps = cache.output;
    m.frozen_reps = mu_reg > 0.0 ? frozen_model.forward(x, &plan).output : cache.output;

    const MamLoss loss = mam_loss(m, mu_reg);
    r.ce += loss.cross_entropy;
    r.distill += loss.distillation;
    r.masked_tokens += plan.positions.size();

    Matrix grad_reps = parts.head.backward(cache.output, plan.positions, loss.grad_logits, grad_head);
    add_scaled(grad_reps, loss.grad_reps, 1.0);
    const NetGradients g = parts.encoder.backward(cache, grad_reps);
    add_into(grad_encoder, g.params);
  }
  r.total = r.ce + r.distill;
  check_finite(r.total, "model loss");
  r.grad = gather({grad_encoder, grad_head});
  return r;
}

// ---------------------------------------------------------------------------
// Phases

void train_tokenizer_phase(TokenizerParts& parts, AdamState& adam, const Snapshot& snap, const CorpusPool& dataset,
                           const TrainConfig& cfg, std::uint32_t stage, std::size_t epoch_begin,
                           std::size_t epoch_end, std::vector<MetricRecord>& log) {
  if (dataset.empty()) {
    std::cerr << "warning: stage " << stage << ": empty dataset, tokenizer phase skipped\n";
    log.push_back({stage, "tokenizer", -1, -1, "skipped_empty_dataset", 1.0});
    return;
  }
  require(adam.m.size() == parts.param_count(), ErrorKind::DimensionMismatch,
          "tokenizer optimizer state does not match the parameters");
  require(dataset.dim() == parts.codebook.dim(), ErrorKind::DimensionMismatch,
          "dataset dimension " + std::to_string(dataset.dim()) + " does not match the tokenizer");

  std::vector<TokenizerTargets> targets(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) targets[i] = tokenizer_targets(snap, dataset.clip(i).features);

  const std::size_t n = dataset.size();
  const std::size_t bs = cfg.batch_size;
  for (std::size_t epoch = epoch_begin; epoch < epoch_end; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, stage, kTokenizerTag, epoch);
    std::vector<std::uint64_t> counts(parts.codebook.size(), 0);
    double sums[5] = {0, 0, 0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<const Matrix*> feats;
      std::vector<const TokenizerTargets*> tgts;
      for (std::size_t k = start; k < end; ++k) {
        feats.push_back(&dataset.clip(order[k]).features);
        tgts.push_back(&targets[order[k]]);
      }
      const std::uint64_t neg_seed = derive_seed(cfg.seed, {stage, kNegativesTag, epoch, batch});
      const TokenizerBatchResult res = tokenizer_objective(parts, feats, tgts, cfg, neg_seed);

      std::vector<double> flat =
          gather({parts.encoder.params(), parts.estimator.params(), parts.codebook.codes.flat()});
      adam_step(flat, res.grad, adam, cfg.lr);
      scatter(flat, {parts.encoder.params(), parts.estimator.params(), parts.codebook.codes.flat()});

      update_usage(parts.codebook, res.quantized, cfg.gamma);
      if (!cfg.no_reinit) reinit_codes(parts.codebook, res.quantized, cfg.gamma);

      const auto e = static_cast<std::int64_t>(epoch), bt = static_cast<std::int64_t>(batch);
      log.push_back({stage, "tokenizer", e, bt, "l1", res.l1});
      log.push_back({stage, "tokenizer", e, bt, "l2", res.l2});
      log.push_back({stage, "tokenizer", e, bt, "l3", res.l3});
      log.push_back({stage, "tokenizer", e, bt, "contra", res.contra});
      log.push_back({stage, "tokenizer", e, bt, "total", res.total});
      sums[0] += res.l1;
      sums[1] += res.l2;
      sums[2] += res.l3;
      sums[3] += res.contra;
      sums[4] += res.total;
      for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += res.quantized.assignment_counts[k];
      ++batches;
    }
    const auto e = static_cast<std::int64_t>(epoch);
    const double inv = 1.0 / static_cast<double>(batches);
    const char* names[5] = {"l1", "l2", "l3", "contra", "total"};
    for (int k = 0; k < 5; ++k) log.push_back({stage, "tokenizer", e, -1, names[k], sums[k] * inv});
    const CodebookHealth health = codebook_health(counts);
    log.push_back({stage, "tokenizer", e, -1, "utilization", health.utilization});
    log.push_back({stage, "tokenizer", e, -1, "perplexity", health.perplexity});
  }
}

std::vector<std::vector<std::uint32_t>> quantize_targets(const TokenizerParts& parts, const CorpusPool& dataset) {
  std::vector<std::vector<std::uint32_t>> out(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out[i] = quantize(parts.encoder.forward(dataset.clip(i).features).output, parts.codebook).indices;
  }
  return out;
}

void train_model_phase(ModelParts& parts, AdamState& adam, const Snapshot& snap, const CorpusPool& dataset,
                       const std::vector<std::vector<std::uint32_t>>& targets, const TrainConfig& cfg,
                       std::uint32_t stage, std::size_t epoch_begin, std::size_t epoch_end,
                       std::vector<MetricRecord>& log) {
  if (dataset.empty()) {
    std::cerr << "warning: stage " << stage << ": empty dataset, model phase skipped\n";
    log.push_back({stage, "model", -1, -1, "skipped_empty_dataset", 1.0});
    return;
  }
  require(adam.m.size() == parts.param_count(), ErrorKind::DimensionMismatch,
          "model optimizer state does not match the parameters");
  require(targets.size() == dataset.size(), ErrorKind::DimensionMismatch, "one target list per clip required");

  const std::size_t n = dataset.size();
  const std::size_t bs = cfg.batch_size;
  for (std::size_t epoch = epoch_begin; epoch < epoch_end; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, stage, kModelTag, epoch);
    double sums[3] = {0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<const Matrix*> feats;
      std::vector<const std::vector<std::uint32_t>*> tgts;
      std::vector<MaskPlan> plans;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        feats.push_back(&dataset.clip(idx).features);
        tgts.push_back(&targets[idx]);
        plans.push_back(make_mask(dataset.clip(idx).tokens(), cfg.mask_ratio,
                                  derive_seed(cfg.seed, {stage, kModelTag, epoch, idx})));
      }
      const ModelBatchResult res = model_objective(parts, snap.model_encoder(), feats, tgts, plans, cfg.mu_reg);

      std::vector<double> flat = gather({parts.encoder.params(), parts.head.params()});
      adam_step(flat, res.grad, adam, cfg.lr);
      scatter(flat, {parts.encoder.params(), parts.head.params()});

      const auto e = static_cast<std::int64_t>(epoch), bt = static_cast<std::int64_t>(batch);
      log.push_back({stage, "model", e, bt, "ce", res.ce});
      log.push_back({stage, "model", e, bt, "distill", res.distill});
      log.push_back({stage, "model", e, bt, "total", res.total});
      sums[0] += res.ce;
      sums[1] += res.distill;
      sums[2] += res.total;
      ++batches;
    }
    const auto e = static_cast<std::int64_t>(epoch);
    const double inv = 1.0 / static_cast<double>(batches);
    log.push_back({stage, "model", e, -1, "ce", sums[0] * inv});
    log.push_back({stage, "model", e, -1, "distill", sums[1] * inv});
    log.push_back({stage, "model", e, -1, "total", sums[2] * inv});
  }
}

// ---------------------------------------------------------------------------
// Stages

void begin_base_stage(WorkbenchState& state, const CorpusPool& general_pool) {
  require(!state.pending.has_value(), ErrorKind::InvalidArgument, "a stage is already in progress");
  require(!state.base_done, ErrorKind::InvalidArgument, "base stage already trained");
  require(general_pool.empty() || general_pool.dim() == state.tokenizer.codebook.dim(),
          ErrorKind::DimensionMismatch, "general pool dimension does not match the model");
  state.pending = StageProgress{
      take_snapshot(state.tokenizer.encoder, state.model.encoder, state.tokenizer.codebook, 0),
      general_pool, 0, true, 0, 0};
}

void begin_adapt_stage(WorkbenchState& state, const CorpusPool& domain_pool, const CorpusPool& general_pool,
                       const TrainConfig& cfg_in) {
  require(state.base_done, ErrorKind::InvalidArgument, "continual adaptation needs a base-trained state");
  require(!state.pending.has_value(), ErrorKind::InvalidArgument, "a stage is already in progress");
  require(domain_pool.empty() || domain_pool.dim() == state.tokenizer.codebook.dim(),
          ErrorKind::DimensionMismatch, "domain pool dimension does not match the model");
  const TrainConfig cfg = stage_config(cfg_in, false);
  const std::uint32_t stage = state.stage + 1;
  Snapshot snap = take_snapshot(state.tokenizer.encoder, state.model.encoder, state.tokenizer.codebook, stage);

  CorpusPool dataset;
  if (cfg.no_sampling || domain_pool.empty()) {
    dataset = domain_pool;
  } else {
    const std::size_t budget = cfg.budget > 0 ? cfg.budget : domain_pool.size();
    const MixRatios ratios{cfg.ratio_task, cfg.ratio_general, cfg.ratio_adaptive};
    const SamplerOptions options{cfg.clusters, cfg.query_fraction, cfg.kmeans_iters};
    dataset = build_adaptive_dataset(domain_pool, general_pool, state.adaptive, budget, ratios,
                                     derive_seed(cfg.seed, {kSamplingTag, stage}), options, stage)
                  .pool;
  }
  state.pending = StageProgress{std::move(snap), std::move(dataset), stage, false, 0, 0};
}

StageReport run_pending_stage(WorkbenchState& state, const TrainConfig& cfg_in, std::size_t max_epochs) {
  require(state.pending.has_value(), ErrorKind::InvalidArgument, "no stage in progress");
  StageProgress& p = *state.pending;
  const TrainConfig cfg = stage_config(cfg_in, p.base);
  cfg.validate();
  const std::size_t epochs = cfg.epochs;

  StageReport report;
  report.stage = p.stage;
  report.dataset_size = p.dataset.size();

  std::size_t budget = max_epochs;
  if (p.tokenizer_epochs_done < epochs && budget > 0) {
    const std::size_t end = p.tokenizer_epochs_done + std::min(budget, epochs - p.tokenizer_epochs_done);
    train_tokenizer_phase(state.tokenizer, state.tokenizer_adam, p.snapshot, p.dataset, cfg, p.stage,
                          p.tokenizer_epochs_done, end, report.log);
    budget -= end - p.tokenizer_epochs_done;
    p.tokenizer_epochs_done = end;
  }
  if (p.tokenizer_epochs_done == epochs && p.model_epochs_done < epochs && budget > 0) {
    const auto targets = quantize_targets(state.tokenizer, p.dataset);
    const std::size_t end = p.model_epochs_done + std::min(budget, epochs - p.model_epochs_done);
    train_model_phase(state.model, state.model_adam, p.snapshot, p.dataset, targets, cfg, p.stage,
                      p.model_epochs_done, end, report.log);
    p.model_epochs_done = end;
  }
  if (p.tokenizer_epochs_done < epochs || p.model_epochs_done < epochs) return report;

  // Close the stage.
  if (!p.dataset.empty()) {
    std::vector<std::uint64_t> counts(state.tokenizer.codebook.size(), 0);
    double enc_sum = 0.0, model_sum = 0.0;
    for (const auto& clip : p.dataset.clips()) {
      const Matrix e = state.tokenizer.encoder.forward(clip.features).output;
      for (std::uint32_t z : quantize(e, state.tokenizer.codebook).indices) ++counts[z];
      normalized_drift(e, p.snapshot.tokenizer_encoder().forward(clip.features).output, enc_sum);
      normalized_drift(state.model.encoder.forward(clip.features).output,
                       p.snapshot.model_encoder().forward(clip.features).output, model_sum);
    }
    const double tokens = static_cast<double>(p.dataset.total_tokens());
    const CodebookHealth health = codebook_health(counts);
    report.codebook_utilization = health.utilization;
    report.codebook_perplexity = health.perplexity;
    report.encoder_drift = enc_sum / tokens;
    report.model_drift = model_sum / tokens;
  }
  if (!p.base) state.adaptive = append_to_adaptive(state.adaptive, p.dataset, p.stage);
  state.stage = p.stage;
  if (p.base) state.base_done = true;
  report.adaptive_size = state.adaptive.size();
  report.completed = true;

  const std::uint32_t s = p.stage;
  report.log.push_back({s, "stage", -1, -1, "dataset_size", static_cast<double>(report.dataset_size)});
  report.log.push_back({s, "stage", -1, -1, "adaptive_size", static_cast<double>(report.adaptive_size)});
  report.log.push_back({s, "stage", -1, -1, "utilization", report.codebook_utilization});
  report.log.push_back({s, "stage", -1, -1, "perplexity", report.codebook_perplexity});
  report.log.push_back({s, "stage", -1, -1, "encoder_drift", report.encoder_drift});
  report.log.push_back({s, "stage", -1, -1, "model_drift", report.model_drift});
  state.pending.reset();
  return report;
}

StageReport pretrain_base(WorkbenchState& state, const CorpusPool& general_pool, const TrainConfig& cfg) {
  begin_base_stage(state, general_pool);
  return run_pending_stage(state, cfg);
}

StageReport continual_adapt(WorkbenchState& state, const CorpusPool& domain_pool, const CorpusPool& general_pool,
                            const TrainConfig& cfg) {
  begin_adapt_stage(state, domain_pool, general_pool, cfg);
  return run_pending_stage(state, cfg);
}

}  // namespace cpt
