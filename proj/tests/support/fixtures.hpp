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

// Small seeded training setups shared by the trainer, checkpoint and
// evaluation tests.

#include <algorithm>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "cpt/config.hpp"
#include "cpt/corpus.hpp"
#include "cpt/trainer.hpp"

namespace cpt::testing {

inline TrainConfig small_config() {
  TrainConfig c;
  c.dim = 4;
  c.hidden = 6;
  c.codebook_size = 8;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.lambda_reg = 1.0;
  c.mu_reg = 1.0;
  c.clusters = 3;
  c.query_fraction = 0.2;
  c.seed = 5;
  return c;
}

inline DomainSpec blob_spec(const std::string& name, std::vector<std::vector<double>> means, std::size_t clips,
                            std::uint64_t seed, double covscale = 0.3) {
  DomainSpec s;
  s.name = name;
  for (auto& m : means) s.clusters.push_back({std::move(m), covscale});
  s.clip_count = clips;
  s.t_min = 2;
  s.t_max = 6;
  s.seed = seed;
  return s;
}

inline CorpusPool blobs(const std::string& name, std::vector<std::vector<double>> means, std::size_t clips,
                        std::uint64_t seed) {
  return generate_domain(blob_spec(name, std::move(means), clips, seed));
}

inline CorpusPool general_pool(std::uint64_t seed = 1) {
  return blobs("general", {{2, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 2, 0}}, 24, seed);
}

inline CorpusPool domain_pool(std::uint64_t seed = 2) {
  return blobs("domain", {{0, 0, 0, 3}, {1, 0, 0, -3}}, 16, seed);
}

inline bool bytes_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

inline bool states_equal(const WorkbenchState& a, const WorkbenchState& b) {
  return a.tokenizer == b.tokenizer && a.model == b.model && a.tokenizer_adam == b.tokenizer_adam &&
         a.model_adam == b.model_adam && a.adaptive == b.adaptive && a.stage == b.stage &&
         a.base_done == b.base_done && a.pending.has_value() == b.pending.has_value();
}

inline std::vector<double> tokenizer_flat(const TokenizerParts& p) {
  std::vector<double> x(p.encoder.params().begin(), p.encoder.params().end());
  x.insert(x.end(), p.estimator.params().begin(), p.estimator.params().end());
  x.insert(x.end(), p.codebook.codes.flat().begin(), p.codebook.codes.flat().end());
  return x;
}

inline void load_tokenizer(TokenizerParts& p, std::span<const double> x) {
  auto it = x.begin();
  for (auto span : {p.encoder.params(), p.estimator.params(), p.codebook.codes.flat()}) {
    std::copy_n(it, span.size(), span.begin());
    it += static_cast<std::ptrdiff_t>(span.size());
  }
}

inline std::vector<double> model_flat(const ModelParts& p) {
  std::vector<double> x(p.encoder.params().begin(), p.encoder.params().end());
  x.insert(x.end(), p.head.params().begin(), p.head.params().end());
  return x;
}

inline void load_model(ModelParts& p, std::span<const double> x) {
  std::copy_n(x.begin(), p.encoder.param_count(), p.encoder.params().begin());
  std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(p.encoder.param_count()), p.head.params().size(),
              p.head.params().begin());
}

}  // namespace cpt::testing
