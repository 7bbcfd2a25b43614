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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpt/corpus.hpp"
#include "cpt/matrix.hpp"

namespace cpt {

struct Clustering {
  std::size_t k = 0;
  Matrix centroids;                       // k x D
  std::vector<std::uint32_t> assignment;  // per clip
  std::vector<std::size_t> sizes;         // per cluster
  std::size_t iterations = 0;
};

/// k-means over the pooled clip embeddings: seeded k-means++ seeding, then
/// Lloyd iterations until the assignment stops changing or max_iters.
Clustering cluster_corpus(const CorpusPool& pool, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters = 100);

/// Largest-remainder apportionment of `total` seats proportional to `sizes`.
/// Ties in the remainder go to the lower stratum id; no stratum receives more
/// than its size.
std::vector<std::size_t> allocate_strata(std::span<const std::size_t> sizes, std::size_t total);

/// Uniform sampling without replacement inside each stratum. Returns clip
/// indices grouped by stratum, in draw order.
std::vector<std::size_t> sample_queries(const Clustering& clustering,
                                        std::span<const std::size_t> allocations, std::uint64_t seed);

struct Retrieval {
  std::vector<std::size_t> indices;  // into the pool, best first
  std::vector<double> scores;        // max cosine to any query
};

/// Scores every clip by its best cosine similarity to a query embedding and
/// ranks them (score descending, id ascending on ties).
Retrieval rank_by_similarity(const Matrix& queries, const CorpusPool& pool);

/// Top-m of rank_by_similarity.
Retrieval retrieve(const Matrix& queries, const CorpusPool& pool, std::size_t m);

struct MixRatios {
  double task = 0.5;
  double general = 0.25;
  double adaptive = 0.25;
};

struct SamplerOptions {
  std::size_t clusters = 8;
  double query_fraction = 0.1;
  std::size_t kmeans_iters = 100;
};

struct ManifestEntry {
  std::string id;
  std::string source;  // "task", "general" or "adaptive"
  double score = 0.0;
};

struct AdaptiveDataset {
  CorpusPool pool;
  std::vector<ManifestEntry> manifest;
  std::vector<std::size_t> query_indices;  // into the task pool
  std::uint32_t stage = 0;
};

/// Clusters the task pool, draws proportional queries, retrieves the most
/// similar clips from the general and adaptive pools and fills the remaining
/// share with a stratified task sample. An empty adaptive pool hands its share
/// to the general pool. Clip ids are unique and the size equals `budget`.
AdaptiveDataset build_adaptive_dataset(const CorpusPool& task_pool, const CorpusPool& general_pool,
                                       const CorpusPool& adaptive_pool, std::size_t budget,
                                       const MixRatios& ratios, std::uint64_t seed,
                                       const SamplerOptions& options = {}, std::uint32_t stage = 0);

/// "s<stage>:<id>", the name a clip gets when it enters the adaptive pool.
std::string adaptive_clip_id(std::uint32_t stage, const std::string& id);
/// Strips an adaptive-pool prefix if present.
std::string base_clip_id(const std::string& id);

/// Adaptive pool extended by the stage dataset (ids prefixed with the stage).
CorpusPool append_to_adaptive(const CorpusPool& adaptive, const CorpusPool& stage_dataset,
                              std::uint32_t stage);

/// One "<id>\t<source>\t<score>" line per clip.
void write_manifest(const AdaptiveDataset& dataset, const std::filesystem::path& path);

}  // namespace cpt
