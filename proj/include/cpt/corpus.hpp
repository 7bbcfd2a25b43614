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
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpt/matrix.hpp"

namespace cpt {

/// One clip: T token-feature rows of dimension D.
struct FeatureClip {
  std::string id;
  std::string domain;
  Matrix features;

  std::size_t tokens() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  friend bool operator==(const FeatureClip&, const FeatureClip&) = default;
};

/// l2-normalized token mean. A clip whose token mean has norm below 1e-12
/// gets the zero vector, which scores cosine 0 against everything.
std::vector<double> pooled_embedding(const Matrix& features);

/// Immutable named collection of clips with their pooled embeddings.
class CorpusPool {
 public:
  CorpusPool() = default;
  /// Validates ids (unique), dimensions (uniform, equal to `dim` when given)
  /// and finiteness, then computes the pooled embeddings.
  CorpusPool(std::string name, std::vector<FeatureClip> clips, std::size_t dim = 0);

  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return clips_.size(); }
  bool empty() const noexcept { return clips_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  const std::vector<FeatureClip>& clips() const noexcept { return clips_; }
  const FeatureClip& clip(std::size_t i) const { return clips_.at(i); }
  /// Row i is the pooled embedding of clip i.
  const Matrix& pooled() const noexcept { return pooled_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_of(id).has_value(); }

  std::size_t total_tokens() const;

  /// Pools compare by content; the name is metadata and is not stored in SNRF files.
  friend bool operator==(const CorpusPool& a, const CorpusPool& b) {
    return a.dim_ == b.dim_ && a.clips_ == b.clips_;
  }

 private:
  std::string name_;
  std::size_t dim_ = 0;
  std::vector<FeatureClip> clips_;
  Matrix pooled_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// New pool made of the listed clips of `src`, in the given order.
CorpusPool subset(const CorpusPool& src, std::span<const std::size_t> indices, std::string name);

// ---------------------------------------------------------------------------
// Synthetic domains

struct ClusterSpec {
  std::vector<double> mean;
  double covscale = 1.0;
};

struct DomainSpec {
  std::string name;
  std::vector<ClusterSpec> clusters;
  std::size_t clip_count = 0;
  std::size_t t_min = 16;
  std::size_t t_max = 16;
  std::uint64_t seed = 0;
  /// Probability that a clip also draws tokens from a second cluster
  /// (gives multi-hot labels).
  double secondary_prob = 0.0;

  std::size_t dim() const { return clusters.empty() ? 0 : clusters.front().mean.size(); }
  void validate() const;
};

/// Pool plus per-clip cluster memberships (the ground-truth labels).
struct LabeledPool {
  CorpusPool pool;
  std::vector<std::vector<std::uint32_t>> labels;
  std::size_t class_count = 0;
};

CorpusPool generate_domain(const DomainSpec& spec);
LabeledPool generate_labeled_domain(const DomainSpec& spec);
/// Generates several domains that must share one feature dimension.
std::vector<LabeledPool> generate_domains(std::span<const DomainSpec> specs);

// ---------------------------------------------------------------------------
// SNRF persistence
//
//   "SNRF" | u32 version | u32 clip count | u32 D |
//   per clip: u32 id length, id bytes, u32 domain length, domain bytes, u32 T,
//             T*D float32, row-major
//
// All integers and floats little-endian.

inline constexpr std::uint32_t kSnrfVersion = 1;

std::vector<std::uint8_t> encode_pool(const CorpusPool& pool);
CorpusPool decode_pool(std::span<const std::uint8_t> bytes, std::string name);

void save_pool(const CorpusPool& pool, const std::filesystem::path& path);
/// The pool is named after the file stem.
CorpusPool load_pool(const std::filesystem::path& path);

/// Text sidecar "<id>\t<c1>,<c2>..." with a "# classes N" header line.
void save_labels(const LabeledPool& labeled, const std::filesystem::path& path);
LabeledPool load_labeled_pool(const std::filesystem::path& pool_path,
                              const std::filesystem::path& labels_path);

}  // namespace cpt
