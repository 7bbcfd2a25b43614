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

#include "cpt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string_view>
#include <unordered_set>

#include "cpt/error.hpp"
#include "cpt/kernels.hpp"
#include "cpt/rng.hpp"

namespace cpt {

namespace {

std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> x) {
  const auto& kt = kern::active();
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = kt.squared_distance(centroids.row(c).data(), x.data(), x.size());
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

}  // namespace

Clustering cluster_corpus(const CorpusPool& pool, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  require(!pool.empty(), ErrorKind::InvalidArgument, "cannot cluster an empty pool");
  require(k >= 1 && k <= pool.size(), ErrorKind::InvalidArgument,
          "cluster count " + std::to_string(k) + " must lie in [1, " + std::to_string(pool.size()) + "]");
  const Matrix& x = pool.pooled();
  const std::size_t n = x.rows(), d = x.cols();
  const auto& kt = kern::active();
  Rng rng(seed);

  Clustering cl;
  cl.k = k;
  cl.centroids = Matrix(k, d);
  auto set_centroid = [&](std::size_t c, std::size_t i) {
    std::copy(x.row(i).begin(), x.row(i).end(), cl.centroids.row(c).begin());
  };

  // k-means++ seeding.
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  set_centroid(0, first);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = kt.squared_distance(x.row(i).data(), x.row(first).data(), d);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = first;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    }
    // With every point already covered, the extra centroids duplicate an
    // existing one and lose all ties to it.
    set_centroid(c, pick);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], kt.squared_distance(x.row(i).data(), x.row(pick).data(), d));
    }
  }

  cl.assignment.assign(n, std::numeric_limits<std::uint32_t>::max());
  cl.sizes.assign(k, 0);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t a = nearest_centroid(cl.centroids, x.row(i));
      if (a != cl.assignment[i]) {
        cl.assignment[i] = a;
        changed = true;
      }
    }
    cl.iterations = iter + 1;
    if (!changed) break;

    Matrix sums(k, d);
    std::fill(cl.sizes.begin(), cl.sizes.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      kt.axpy(1.0, x.row(i).data(), sums.row(cl.assignment[i]).data(), d);
      ++cl.sizes[cl.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (cl.sizes[c] == 0) continue;  // empty clusters keep their centroid
      auto dst = cl.centroids.row(c);
      auto src = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] / static_cast<double>(cl.sizes[c]);
    }
  }
  std::fill(cl.sizes.begin(), cl.sizes.end(), 0);
  for (std::uint32_t a : cl.assignment) ++cl.sizes[a];
  return cl;
}

std::vector<std::size_t> allocate_strata(std::span<const std::size_t> sizes, std::size_t total) {
  using u128 = unsigned __int128;
  const std::size_t sum = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  require(total <= sum, ErrorKind::Infeasible,
          "cannot draw " + std::to_string(total) + " from strata holding " + std::to_string(sum));
  std::vector<std::size_t> alloc(sizes.size(), 0);
  if (total == 0) return alloc;

  std::vector<std::size_t> remainder(sizes.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const u128 num = static_cast<u128>(total) * sizes[i];
    alloc[i] = static_cast<std::size_t>(num / sum);
    remainder[i] = static_cast<std::size_t>(num % sum);
    assigned += alloc[i];
  }

  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  std::size_t left = total - assigned;
  for (std::size_t i : order) {
    if (left == 0) break;
    if (alloc[i] < sizes[i]) {
      ++alloc[i];
      --left;
    }
  }
  // Seats that hit a full stratum go to the strata with the most room left.
  while (left > 0) {
    std::size_t best = sizes.size();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (alloc[i] < sizes[i] && (best == sizes.size() || sizes[i] - alloc[i] > sizes[best] - alloc[best])) {
        best = i;
      }
    }
    ++alloc[best];
    --left;
  }
  return alloc;
}

std::vector<std::size_t> sample_queries(const Clustering& clustering,
                                        std::span<const std::size_t> allocations, std::uint64_t seed) {
  require(allocations.size() == clustering.k, ErrorKind::DimensionMismatch, "one allocation per stratum required");
  std::vector<std::vector<std::size_t>> members(clustering.k);
  for (std::size_t i = 0; i < clustering.assignment.size(); ++i) members[clustering.assignment[i]].push_back(i);

  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < clustering.k; ++c) {
    require(allocations[c] <= members[c].size(), ErrorKind::Infeasible,
            "allocation " + std::to_string(allocations[c]) + " exceeds stratum " + std::to_string(c) +
                " of size " + std::to_string(members[c].size()));
    Rng rng(derive_seed(seed, {c}));
    for (std::size_t p : rng.sample_without_replacement(members[c].size(), allocations[c])) {
      out.push_back(members[c][p]);
    }
  }
  return out;
}

Retrieval rank_by_similarity(const Matrix& queries, const CorpusPool& pool) {
  require(!pool.empty(), ErrorKind::InvalidArgument, "cannot retrieve from an empty pool");
  require(queries.rows() > 0, ErrorKind::InvalidArgument, "retrieval needs at least one query");
  require(queries.cols() == pool.dim(), ErrorKind::DimensionMismatch, "query/pool dimension mismatch");
  const auto& kt = kern::active();
  const std::size_t n = pool.size();
  std::vector<double> score(n), buf(queries.rows());
  for (std::size_t i = 0; i < n; ++i) {
    kt.gemv(queries.data(), queries.rows(), queries.cols(), pool.pooled().row(i).data(), buf.data());
    score[i] = *std::max_element(buf.begin(), buf.end());
  }
  Retrieval r;
  r.indices.resize(n);
  std::iota(r.indices.begin(), r.indices.end(), 0);
  std::sort(r.indices.begin(), r.indices.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return pool.clip(a).id < pool.clip(b).id;
  });
  r.scores.reserve(n);
  for (std::size_t i : r.indices) r.scores.push_back(score[i]);
  return r;
}

Retrieval retrieve(const Matrix& queries, const CorpusPool& pool, std::size_t m) {
  require(m <= pool.size(), ErrorKind::Infeasible,
          "cannot retrieve " + std::to_string(m) + " clips from a pool of " + std::to_string(pool.size()));
  Retrieval r = rank_by_similarity(queries, pool);
  r.indices.resize(m);
  r.scores.resize(m);
  return r;
}

std::string adaptive_clip_id(std::uint32_t stage, const std::string& id) {
  return "s" + std::to_string(stage) + ":" + base_clip_id(id);
}

std::string base_clip_id(const std::string& id) {
  std::string_view rest = id;
  while (rest.size() >= 3 && rest[0] == 's') {
    std::size_t i = 1;
    while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
    if (i == 1 || i >= rest.size() || rest[i] != ':') break;
    rest.remove_prefix(i + 1);
  }
  return std::string(rest);
}

namespace {

Matrix rows_of(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

AdaptiveDataset build_adaptive_dataset(const CorpusPool& task_pool, const CorpusPool& general_pool,
                                       const CorpusPool& adaptive_pool, std::size_t budget,
                                       const MixRatios& ratios, std::uint64_t seed,
                                       const SamplerOptions& options, std::uint32_t stage) {
  require(!task_pool.empty(), ErrorKind::InvalidArgument, "task pool is empty");
  require(ratios.task >= 0 && ratios.general >= 0 && ratios.adaptive >= 0 &&
              std::abs(ratios.task + ratios.general + ratios.adaptive - 1.0) < 1e-9,
          ErrorKind::InvalidArgument, "mix ratios must be non-negative and sum to 1");
  require(general_pool.empty() || general_pool.dim() == task_pool.dim(), ErrorKind::DimensionMismatch,
          "general pool dimension differs from task pool");
  require(adaptive_pool.empty() || adaptive_pool.dim() == task_pool.dim(), ErrorKind::DimensionMismatch,
          "adaptive pool dimension differs from task pool");

  auto n_general = static_cast<std::size_t>(std::llround(ratios.general * static_cast<double>(budget)));
  auto n_adaptive = static_cast<std::size_t>(std::llround(ratios.adaptive * static_cast<double>(budget)));
  if (adaptive_pool.empty()) {
    n_general += n_adaptive;
    n_adaptive = 0;
  }
  require(n_general + n_adaptive <= budget, ErrorKind::Infeasible, "retrieval shares exceed the budget");
  const std::size_t n_task = budget - n_general - n_adaptive;
  require(n_task <= task_pool.size(), ErrorKind::Infeasible,
          "task share " + std::to_string(n_task) + " exceeds task pool size " + std::to_string(task_pool.size()));

  AdaptiveDataset out;
  out.stage = stage;
  const std::size_t k = std::min(options.clusters, task_pool.size());
  const Clustering cl = cluster_corpus(task_pool, k, derive_seed(seed, {0}), options.kmeans_iters);

  const auto n_queries = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(options.query_fraction * static_cast<double>(task_pool.size()))), 1,
      task_pool.size());
  out.query_indices = sample_queries(cl, allocate_strata(cl.sizes, n_queries), derive_seed(seed, {1}));
  const Matrix queries = rows_of(task_pool.pooled(), out.query_indices);

  std::vector<FeatureClip> clips;
  std::unordered_set<std::string> taken;

  auto task_pick = sample_queries(cl, allocate_strata(cl.sizes, n_task), derive_seed(seed, {2}));
  std::sort(task_pick.begin(), task_pick.end());
  const Retrieval task_scores = rank_by_similarity(queries, task_pool);
  std::vector<double> task_score_by_index(task_pool.size());
  for (std::size_t i = 0; i < task_scores.indices.size(); ++i) {
    task_score_by_index[task_scores.indices[i]] = task_scores.scores[i];
  }
  for (std::size_t i : task_pick) {
    FeatureClip c = task_pool.clip(i);
    c.id = base_clip_id(c.id);
    require(taken.insert(c.id).second, ErrorKind::InvalidArgument, "duplicate task clip id " + c.id);
    out.manifest.push_back({c.id, "task", task_score_by_index[i]});
    clips.push_back(std::move(c));
  }

  auto take_from = [&](const CorpusPool& pool, std::size_t want, const char* source) {
    if (want == 0) return;
    const Retrieval ranked = rank_by_similarity(queries, pool);
    std::size_t got = 0;
    for (std::size_t r = 0; r < ranked.indices.size() && got < want; ++r) {
      FeatureClip c = pool.clip(ranked.indices[r]);
      c.id = base_clip_id(c.id);
      if (!taken.insert(c.id).second) continue;
      out.manifest.push_back({c.id, source, ranked.scores[r]});
      clips.push_back(std::move(c));
      ++got;
    }
    require(got == want, ErrorKind::Infeasible,
            std::string("only ") + std::to_string(got) + " distinct clips available from the " + source +
                " pool, " + std::to_string(want) + " requested");
  };
  take_from(general_pool, n_general, "general");
  take_from(adaptive_pool, n_adaptive, "adaptive");

  out.pool = CorpusPool("dataset-stage" + std::to_string(stage), std::move(clips), task_pool.dim());
  return out;
}

CorpusPool append_to_adaptive(const CorpusPool& adaptive, const CorpusPool& stage_dataset, std::uint32_t stage) {
  std::vector<FeatureClip> clips = adaptive.clips();
  clips.reserve(adaptive.size() + stage_dataset.size());
  for (const auto& c : stage_dataset.clips()) {
    FeatureClip copy = c;
    copy.id = adaptive_clip_id(stage, c.id);
    clips.push_back(std::move(copy));
  }
  const std::size_t dim = adaptive.empty() ? stage_dataset.dim() : adaptive.dim();
  return CorpusPool("adaptive", std::move(clips), dim);
}

void write_manifest(const AdaptiveDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  for (const auto& e : dataset.manifest) out << e.id << '\t' << e.source << '\t' << e.score << '\n';
}

}  // namespace cpt
