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

#include "cpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "cpt/error.hpp"
#include "cpt/rng.hpp"

namespace cpt {

double forgetting_rate(double map_baseline, double map_current) {
  require(std::isfinite(map_baseline) && std::isfinite(map_current), ErrorKind::InvalidArgument,
          "forgetting_rate: non-finite mAP");
  require(map_baseline > 0.0, ErrorKind::InvalidArgument, "forgetting_rate: baseline mAP must be positive");
  return (map_baseline - map_current) / map_baseline * 100.0;
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> relevant) {
  require(scores.size() == relevant.size(), ErrorKind::DimensionMismatch, "average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  require(hits > 0, ErrorKind::InvalidArgument, "average_precision: no positives");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(const Matrix& scores, std::span<const LabelSet> labels) {
  require(scores.rows() == labels.size(), ErrorKind::DimensionMismatch,
          "mean_average_precision: " + std::to_string(scores.rows()) + " score rows for " +
              std::to_string(labels.size()) + " label sets");
  const std::size_t n = scores.rows();
  const std::size_t classes = scores.cols();
  std::vector<std::uint8_t> relevant(n * classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t c : labels[i]) {
      require(c < classes, ErrorKind::InvalidArgument, "mean_average_precision: label out of range");
      relevant[c * n + i] = 1;
    }
  }
  std::vector<double> column(n);
  double total = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::span<const std::uint8_t> rel(relevant.data() + c * n, n);
    if (std::find(rel.begin(), rel.end(), std::uint8_t{1}) == rel.end()) continue;
    for (std::size_t i = 0; i < n; ++i) column[i] = scores(i, c);
    total += average_precision(column, rel);
    ++evaluated;
  }
  require(evaluated > 0, ErrorKind::InvalidArgument, "mean_average_precision: no positives in any class");
  return 100.0 * total / static_cast<double>(evaluated);
}

double macro_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> labels) {
  require(!labels.empty(), ErrorKind::InvalidArgument, "macro_f1: empty input");
  require(predictions.size() == labels.size(), ErrorKind::DimensionMismatch, "macro_f1: size mismatch");
  std::set<std::uint32_t> classes;
  for (const auto& s : predictions) classes.insert(s.begin(), s.end());
  for (const auto& s : labels) classes.insert(s.begin(), s.end());
  require(!classes.empty(), ErrorKind::InvalidArgument, "macro_f1: no classes predicted or present");

  double total = 0.0;
  for (std::uint32_t c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool pred = std::find(predictions[i].begin(), predictions[i].end(), c) != predictions[i].end();
      const bool gold = std::find(labels[i].begin(), labels[i].end(), c) != labels[i].end();
      tp += pred && gold;
      fp += pred && !gold;
      fn += !pred && gold;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    total += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  return 100.0 * total / static_cast<double>(classes.size());
}

CodebookHealth codebook_health(std::span<const std::uint64_t> assignment_counts) {
  require(!assignment_counts.empty(), ErrorKind::InvalidArgument, "codebook_health: empty codebook");
  const std::uint64_t total = std::accumulate(assignment_counts.begin(), assignment_counts.end(), std::uint64_t{0});
  require(total > 0, ErrorKind::InvalidArgument, "codebook_health: empty assignment log");
  CodebookHealth h;
  double entropy = 0.0;
  for (std::uint64_t n : assignment_counts) {
    if (n == 0) continue;
    ++h.active_codes;
    const double p = static_cast<double>(n) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  h.utilization = static_cast<double>(h.active_codes) / static_cast<double>(assignment_counts.size());
  h.perplexity = std::exp(entropy);
  return h;
}

// ---------------------------------------------------------------------------

namespace {

// Softmax of each row in place; returns the mean cross-entropy against targets.
double softmax_rows(Matrix& logits, const Matrix* targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
    if (targets != nullptr) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double t = (*targets)(i, c);
        if (t > 0.0) loss -= t * std::log(std::max(row[c], 1e-300));
      }
    }
  }
  return logits.rows() > 0 ? loss / static_cast<double>(logits.rows()) : 0.0;
}

}  // namespace

LinearProbe LinearProbe::fit(const Matrix& x, const Matrix& targets, const ProbeOptions& options) {
  require(x.rows() == targets.rows() && x.rows() > 0, ErrorKind::DimensionMismatch,
          "linear probe: features and targets disagree or are empty");
  const std::size_t n = x.rows(), d = x.cols(), k = targets.cols();
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < n && !any; ++i) any = targets(i, c) > 0.0;
    present += any;
  }
  require(present >= 2, ErrorKind::InvalidArgument, "linear probe: training set has a single class");

  LinearProbe p;
  p.mean_.assign(d, 0.0);
  p.scale_.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - m) * (x(i, j) - m);
    var /= static_cast<double>(n);
    p.mean_[j] = m;
    p.scale_[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  Matrix xs(n, d + 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) xs(i, j) = (x(i, j) - p.mean_[j]) * p.scale_[j];
  }

  p.weights_ = Matrix(k, d + 1);
  Rng rng(options.seed);
  for (double& w : p.weights_.flat()) w = 0.01 * rng.normal();

  const double inv_n = 1.0 / static_cast<double>(n);
  double previous = 0.0;
  Matrix probs(n, k), grad(k, d + 1);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j <= d; ++j) s += p.weights_(c, j) * xs(i, j);
        probs(i, c) = s;
      }
    }
    const double loss = softmax_rows(probs, &targets);
    p.final_loss_ = loss;
    p.iterations_ = it;
    if (it > 0 && std::abs(previous - loss) < options.tolerance) break;
    previous = loss;
    grad.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = (probs(i, c) - targets(i, c)) * inv_n;
        if (delta == 0.0) continue;
        for (std::size_t j = 0; j <= d; ++j) grad(c, j) += delta * xs(i, j);
      }
    }
    for (std::size_t q = 0; q < grad.size(); ++q) p.weights_.flat()[q] -= options.learning_rate * grad.flat()[q];
    p.iterations_ = it + 1;
  }
  require(std::isfinite(p.final_loss_), ErrorKind::NumericalAbort, "linear probe: non-finite loss");
  return p;
}

Matrix LinearProbe::predict_proba(const Matrix& x) const {
  const std::size_t d = mean_.size();
  require(x.cols() == d, ErrorKind::DimensionMismatch, "linear probe: feature dimension mismatch");
  Matrix out(x.rows(), weights_.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < weights_.rows(); ++c) {
      double s = weights_(c, d);
      for (std::size_t j = 0; j < d; ++j) s += weights_(c, j) * (x(i, j) - mean_[j]) * scale_[j];
      out(i, c) = s;
    }
  }
  softmax_rows(out, nullptr);
  return out;
}

std::vector<std::uint32_t> LinearProbe::predict(const Matrix& x) const {
  const Matrix probs = predict_proba(x);
  std::vector<std::uint32_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = probs.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Matrix soft_targets(std::span<const LabelSet> labels, std::size_t class_count) {
  Matrix t(labels.size(), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(!labels[i].empty(), ErrorKind::InvalidArgument, "soft_targets: clip without labels");
    const double w = 1.0 / static_cast<double>(labels[i].size());
    for (std::uint32_t c : labels[i]) {
      require(c < class_count, ErrorKind::InvalidArgument, "soft_targets: label out of range");
      t(i, c) += w;
    }
  }
  return t;
}

ProbeScores linear_probe(const Matrix& train_x, std::span<const LabelSet> train_labels, const Matrix& test_x,
                         std::span<const LabelSet> test_labels, std::size_t class_count,
                         const ProbeOptions& options) {
  require(test_x.rows() == test_labels.size() && test_x.rows() > 0, ErrorKind::DimensionMismatch,
          "linear_probe: test split is empty or mislabeled");
  const LinearProbe probe = LinearProbe::fit(train_x, soft_targets(train_labels, class_count), options);
  const Matrix probs = probe.predict_proba(test_x);
  ProbeScores s;
  std::vector<LabelSet> predicted(test_x.rows());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.rows(); ++i) {
    auto row = probs.row(i);
    const auto top = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    predicted[i] = {top};
    correct += std::find(test_labels[i].begin(), test_labels[i].end(), top) != test_labels[i].end();
  }
  s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(test_x.rows());
  s.macro_f1 = macro_f1(predicted, test_labels);
  s.map = mean_average_precision(probs, test_labels);
  return s;
}

}  // namespace cpt
