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

#include "cpt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cpt/error.hpp"
#include "cpt/rng.hpp"

namespace cpt {

Matrix clip_representations(const ToyNet& model_encoder, const CorpusPool& pool) {
  const std::size_t d = model_encoder.shape().output;
  Matrix out(pool.size(), d);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Matrix reps = model_encoder.forward(pool.clip(i).features).output;
    auto row = out.row(i);
    for (std::size_t t = 0; t < reps.rows(); ++t) {
      for (std::size_t j = 0; j < d; ++j) row[j] += reps(t, j);
    }
    for (double& v : row) v /= static_cast<double>(reps.rows());
  }
  return out;
}

Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
          "train fraction must lie in (0,1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace {

Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(m.row(idx[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

std::vector<LabelSet> select_labels(const std::vector<LabelSet>& labels, std::span<const std::size_t> idx) {
  std::vector<LabelSet> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

ProbeScores probe_pool(const ToyNet& model_encoder, const LabeledPool& pool, const EvalOptions& options) {
  require(pool.labels.size() == pool.pool.size(), ErrorKind::DimensionMismatch, "probe: one label set per clip");
  const Matrix reps = clip_representations(model_encoder, pool.pool);
  const Split split = split_indices(pool.pool.size(), options.train_fraction, options.seed);
  require(!split.train.empty() && !split.test.empty(), ErrorKind::InvalidArgument, "probe: pool too small to split");
  ProbeOptions probe = options.probe;
  probe.seed = derive_seed(options.seed, {0x9e});
  return linear_probe(select_rows(reps, split.train), select_labels(pool.labels, split.train),
                      select_rows(reps, split.test), select_labels(pool.labels, split.test), pool.class_count,
                      probe);
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double retention_map(const ToyNet& model_encoder, const LabeledPool& pool, const EvalOptions& options) {
  return probe_pool(model_encoder, pool, options).map;
}

DomainScore downstream_score(const ToyNet& model_encoder, const LabeledPool& pool, const EvalOptions& options) {
  const ProbeScores s = probe_pool(model_encoder, pool, options);
  return {pool.pool.name(), s.accuracy, s.macro_f1};
}

EvalReport evaluate(const WorkbenchState& state, const LabeledPool& retention_pool,
                    std::span<const LabeledPool> downstream, const EvalOptions& options,
                    std::optional<double> baseline_map) {
  EvalReport r;
  r.stage = state.stage;
  r.retention_map = retention_map(state.model.encoder, retention_pool, options);
  for (const auto& d : downstream) r.domains.push_back(downstream_score(state.model.encoder, d, options));
  if (baseline_map) {
    r.baseline_map = baseline_map;
    r.forgetting_rate = forgetting_rate(*baseline_map, r.retention_map);
  }
  std::vector<std::uint64_t> counts(state.tokenizer.codebook.size(), 0);
  for (const auto& clip : retention_pool.pool.clips()) {
    const Matrix e = state.tokenizer.encoder.forward(clip.features).output;
    for (std::uint32_t z : quantize(e, state.tokenizer.codebook).indices) ++counts[z];
  }
  if (!retention_pool.pool.empty()) {
    const CodebookHealth h = codebook_health(counts);
    r.codebook_utilization = h.utilization;
    r.codebook_perplexity = h.perplexity;
  }
  return r;
}

std::string EvalReport::to_text() const {
  std::string out;
  auto line = [&](const std::string& metric, const std::string& domain, double v) {
    out += "metric=" + metric + " domain=" + domain + " value=" + format_value(v) + "\n";
  };
  line("stage", "-", static_cast<double>(stage));
  line("retention_map", "-", retention_map);
  if (baseline_map) line("baseline_map", "-", *baseline_map);
  if (forgetting_rate) line("forgetting_rate", "-", *forgetting_rate);
  line("codebook_utilization", "-", codebook_utilization);
  line("codebook_perplexity", "-", codebook_perplexity);
  for (const auto& d : domains) {
    line("accuracy", d.domain, d.accuracy);
    line("macro_f1", d.domain, d.macro_f1);
  }
  return out;
}

EvalReport EvalReport::from_text(std::string_view text) {
  EvalReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  auto field = [](const std::string& l, const std::string& key) -> std::string {
    const std::string tag = key + "=";
    std::size_t at = 0;
    while ((at = l.find(tag, at)) != std::string::npos) {
      if (at == 0 || l[at - 1] == ' ') {
        const std::size_t start = at + tag.size();
        const std::size_t end = l.find(' ', start);
        return l.substr(start, end == std::string::npos ? std::string::npos : end - start);
      }
      at += tag.size();
    }
    fail(ErrorKind::InvalidArgument, "eval report line without " + key + ": " + l);
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::string metric = field(line, "metric");
    const std::string domain = field(line, "domain");
    const std::string raw = field(line, "value");
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    require(end != raw.c_str() && *end == '\0', ErrorKind::InvalidArgument, "eval report: bad value " + raw);
    auto domain_entry = [&]() -> DomainScore& {
      for (auto& d : r.domains) {
        if (d.domain == domain) return d;
      }
      r.domains.push_back({domain, 0.0, 0.0});
      return r.domains.back();
    };
    if (metric == "stage") {
      r.stage = static_cast<std::uint32_t>(v);
    } else if (metric == "retention_map") {
      r.retention_map = v;
    } else if (metric == "baseline_map") {
      r.baseline_map = v;
    } else if (metric == "forgetting_rate") {
      r.forgetting_rate = v;
    } else if (metric == "codebook_utilization") {
      r.codebook_utilization = v;
    } else if (metric == "codebook_perplexity") {
      r.codebook_perplexity = v;
    } else if (metric == "accuracy") {
      domain_entry().accuracy = v;
    } else if (metric == "macro_f1") {
      domain_entry().macro_f1 = v;
    } else {
      fail(ErrorKind::InvalidArgument, "eval report: unknown metric " + metric);
    }
  }
  return r;
}

void EvalReport::validate() const {
  auto pct = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 100.0; };
  require(pct(retention_map), ErrorKind::InvalidArgument, "eval report: retention mAP out of range");
  for (const auto& d : domains) {
    require(pct(d.accuracy) && pct(d.macro_f1), ErrorKind::InvalidArgument,
            "eval report: score out of range for " + d.domain);
  }
  require(codebook_utilization >= 0.0 && codebook_utilization <= 1.0, ErrorKind::InvalidArgument,
          "eval report: utilization out of range");
  if (forgetting_rate) {
    require(baseline_map.has_value(), ErrorKind::InvalidArgument, "eval report: forgetting rate without baseline");
    const double expected = cpt::forgetting_rate(*baseline_map, retention_map);
    require(std::abs(expected - *forgetting_rate) <= 1e-9 * std::max(1.0, std::abs(expected)),
            ErrorKind::InvalidArgument, "eval report: forgetting rate inconsistent with its mAPs");
  }
}

}  // namespace cpt
