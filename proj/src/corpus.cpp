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

#include "cpt/corpus.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"
#include "cpt/rng.hpp"

namespace cpt {

std::vector<double> pooled_embedding(const Matrix& features) {
  std::vector<double> mean(features.cols(), 0.0);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    auto row = features.row(t);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  double norm2 = 0.0;
  for (double& v : mean) {
    v /= static_cast<double>(features.rows());
    norm2 += v * v;
  }
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) {
    std::fill(mean.begin(), mean.end(), 0.0);
    return mean;
  }
  for (double& v : mean) v /= norm;
  return mean;
}

CorpusPool::CorpusPool(std::string name, std::vector<FeatureClip> clips, std::size_t dim)
    : name_(std::move(name)), dim_(dim), clips_(std::move(clips)) {
  if (!clips_.empty() && dim_ == 0) dim_ = clips_.front().dim();
  pooled_ = Matrix(clips_.size(), dim_);
  by_id_.reserve(clips_.size());
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    const FeatureClip& c = clips_[i];
    require(c.tokens() >= 1, ErrorKind::InvalidArgument, "clip " + c.id + " has no tokens");
    require(c.dim() == dim_, ErrorKind::DimensionMismatch,
            "clip " + c.id + " has dimension " + std::to_string(c.dim()) + ", pool expects " +
                std::to_string(dim_));
    for (double v : c.features.flat()) {
      require(std::isfinite(v), ErrorKind::InvalidArgument, "clip " + c.id + " has non-finite features");
    }
    require(by_id_.emplace(c.id, i).second, ErrorKind::InvalidArgument,
            "duplicate clip id " + c.id + " in pool " + name_);
    auto p = pooled_embedding(c.features);
    std::copy(p.begin(), p.end(), pooled_.row(i).begin());
  }
}

std::optional<std::size_t> CorpusPool::index_of(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t CorpusPool::total_tokens() const {
  std::size_t n = 0;
  for (const auto& c : clips_) n += c.tokens();
  return n;
}

CorpusPool subset(const CorpusPool& src, std::span<const std::size_t> indices, std::string name) {
  std::vector<FeatureClip> clips;
  clips.reserve(indices.size());
  for (std::size_t i : indices) clips.push_back(src.clip(i));
  return CorpusPool(std::move(name), std::move(clips), src.dim());
}

// ---------------------------------------------------------------------------

void DomainSpec::validate() const {
  require(!name.empty(), ErrorKind::InvalidArgument, "domain spec needs a name");
  require(!clusters.empty(), ErrorKind::InvalidArgument, "domain " + name + ": no clusters");
  require(clip_count > 0, ErrorKind::InvalidArgument, "domain " + name + ": clip count must be positive");
  require(t_min >= 1 && t_max >= t_min, ErrorKind::InvalidArgument,
          "domain " + name + ": bad token range");
  require(secondary_prob >= 0.0 && secondary_prob <= 1.0, ErrorKind::InvalidArgument,
          "domain " + name + ": secondary_prob outside [0,1]");
  const std::size_t d = clusters.front().mean.size();
  require(d >= 1, ErrorKind::InvalidArgument, "domain " + name + ": empty cluster mean");
  for (const auto& c : clusters) {
    require(c.mean.size() == d, ErrorKind::DimensionMismatch,
            "domain " + name + ": cluster means differ in dimension");
    require(c.covscale >= 0.0 && std::isfinite(c.covscale), ErrorKind::InvalidArgument,
            "domain " + name + ": covscale must be non-negative");
  }
}

LabeledPool generate_labeled_domain(const DomainSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim();
  const std::size_t k = spec.clusters.size();
  Rng rng(spec.seed);

  LabeledPool out;
  out.class_count = k;
  std::vector<FeatureClip> clips;
  clips.reserve(spec.clip_count);
  out.labels.reserve(spec.clip_count);

  char idbuf[32];
  for (std::size_t n = 0; n < spec.clip_count; ++n) {
    std::vector<std::uint32_t> members{static_cast<std::uint32_t>(rng.below(k))};
    // The draw happens even for single-cluster specs so that clip streams do
    // not depend on whether a second cluster could be chosen.
    const bool second = rng.uniform() < spec.secondary_prob;
    if (second && k > 1) {
      auto other = static_cast<std::uint32_t>(rng.below(k - 1));
      if (other >= members[0]) ++other;
      members.push_back(other);
    }
    const std::size_t t = spec.t_min + static_cast<std::size_t>(rng.below(spec.t_max - spec.t_min + 1));

    Matrix x(t, d);
    for (std::size_t r = 0; r < t; ++r) {
      const auto& cl = spec.clusters[members[rng.below(members.size())]];
      for (std::size_t j = 0; j < d; ++j) {
        const double v = cl.mean[j] + cl.covscale * rng.normal();
        // Stored values are float-representable so SNRF round trips are exact.
        x(r, j) = static_cast<double>(static_cast<float>(v));
      }
    }
    std::snprintf(idbuf, sizeof(idbuf), "-%06zu", n);
    clips.push_back(FeatureClip{spec.name + idbuf, spec.name, std::move(x)});
    std::sort(members.begin(), members.end());
    out.labels.push_back(std::move(members));
  }
  out.pool = CorpusPool(spec.name, std::move(clips), d);
  return out;
}

CorpusPool generate_domain(const DomainSpec& spec) {
  return generate_labeled_domain(spec).pool;
}

std::vector<LabeledPool> generate_domains(std::span<const DomainSpec> specs) {
  std::vector<LabeledPool> out;
  for (const auto& s : specs) {
    s.validate();
    if (!out.empty()) {
      require(s.dim() == out.front().pool.dim(), ErrorKind::DimensionMismatch,
              "domain " + s.name + " has dimension " + std::to_string(s.dim()) +
                  " but earlier domains use " + std::to_string(out.front().pool.dim()));
    }
    out.push_back(generate_labeled_domain(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pool(const CorpusPool& pool) {
  ByteWriter w;
  w.raw("SNRF");
  w.u32(kSnrfVersion);
  w.u32(static_cast<std::uint32_t>(pool.size()));
  w.u32(static_cast<std::uint32_t>(pool.dim()));
  for (const auto& c : pool.clips()) {
    w.str(c.id);
    w.str(c.domain);
    w.u32(static_cast<std::uint32_t>(c.tokens()));
    for (double v : c.features.flat()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

CorpusPool decode_pool(std::span<const std::uint8_t> bytes, std::string name) {
  ByteReader r(bytes);
  if (r.remaining() < 4) fail(ErrorKind::Truncated, "file shorter than the SNRF magic");
  if (r.raw(4) != "SNRF") fail(ErrorKind::BadMagic, "not an SNRF file");
  const std::uint32_t version = r.u32();
  if (version != kSnrfVersion) {
    fail(ErrorKind::VersionMismatch, "SNRF version " + std::to_string(version) + ", expected " +
                                         std::to_string(kSnrfVersion));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  std::vector<FeatureClip> clips;
  clips.reserve(std::min<std::size_t>(count, r.remaining()));
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureClip c;
    c.id = r.str();
    c.domain = r.str();
    const std::uint32_t t = r.u32();
    const std::size_t n = static_cast<std::size_t>(t) * dim;
    if (n * 4 > r.remaining()) fail(ErrorKind::Truncated, "SNRF payload truncated in clip " + c.id);
    c.features = Matrix(t, dim);
    for (double& v : c.features.flat()) v = static_cast<double>(r.f32());
    clips.push_back(std::move(c));
  }
  return CorpusPool(std::move(name), std::move(clips), dim);
}

void save_pool(const CorpusPool& pool, const std::filesystem::path& path) {
  write_file(path, encode_pool(pool));
}

CorpusPool load_pool(const std::filesystem::path& path) {
  return decode_pool(read_file(path), path.stem().string());
}

void save_labels(const LabeledPool& labeled, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "# classes " << labeled.class_count << '\n';
  for (std::size_t i = 0; i < labeled.pool.size(); ++i) {
    out << labeled.pool.clip(i).id << '\t';
    const auto& ls = labeled.labels[i];
    for (std::size_t j = 0; j < ls.size(); ++j) out << (j ? "," : "") << ls[j];
    out << '\n';
  }
}

LabeledPool load_labeled_pool(const std::filesystem::path& pool_path,
                              const std::filesystem::path& labels_path) {
  LabeledPool out;
  out.pool = load_pool(pool_path);
  std::ifstream in(labels_path);
  if (!in) fail(ErrorKind::Io, "cannot read " + labels_path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# classes ", 0) != 0) {
    fail(ErrorKind::BadMagic, labels_path.string() + ": missing '# classes' header");
  }
  out.class_count = std::stoul(line.substr(10));
  out.labels.assign(out.pool.size(), {});
  std::vector<bool> seen(out.pool.size(), false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::InvalidArgument,
            labels_path.string() + ": malformed line '" + line + "'");
    auto idx = out.pool.index_of(line.substr(0, tab));
    require(idx.has_value(), ErrorKind::InvalidArgument,
            labels_path.string() + ": unknown clip " + line.substr(0, tab));
    std::stringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::uint32_t v = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      require(res.ec == std::errc{} && v < out.class_count, ErrorKind::InvalidArgument,
              labels_path.string() + ": bad label '" + tok + "'");
      out.labels[*idx].push_back(v);
    }
    seen[*idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    require(seen[i], ErrorKind::InvalidArgument,
            labels_path.string() + ": no labels for " + out.pool.clip(i).id);
  }
  return out;
}

}  // namespace cpt
