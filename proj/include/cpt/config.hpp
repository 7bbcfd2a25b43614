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
#include <string>
#include <string_view>
#include <vector>

namespace cpt {

/// Every hyperparameter of a run. Text form is one "key = value" per line.
struct TrainConfig {
  // Objective weights and codebook dynamics.
  double lambda_reg = 1e6;
  double mu_reg = 1e6;
  double lambda_contra = 10.0;
  double gamma = 0.9;
  double tau = 0.3;
  std::size_t max_negatives = 256;

  // Optimization.
  double lr = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double mask_ratio = 0.75;
  double init_scale = 0.1;

  // Shapes.
  std::size_t codebook_size = 64;
  std::size_t dim = 16;
  std::size_t hidden = 32;

  std::uint64_t seed = 1;

  // Ablations. `dcpt` implies the three switches and zero distillation weights.
  bool no_reinit = false;
  bool no_contrastive = false;
  bool no_sampling = false;
  bool dcpt = false;

  // Dataset construction.
  std::size_t clusters = 8;
  double query_fraction = 0.1;
  std::size_t kmeans_iters = 100;
  std::size_t budget = 0;  // 0: size of the task pool
  double ratio_task = 0.5;
  double ratio_general = 0.25;
  double ratio_adaptive = 0.25;

  /// Sets one key from its text value. Accepts '-' or '_' in key names.
  void set(std::string_view key, std::string_view value);
  static std::vector<std::string> keys();

  /// Canonical text (fixed key order, round-trip exact numbers).
  std::string to_text() const;
  static TrainConfig from_text(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  /// Overrides only the keys present in `text` / the file.
  void apply_text(std::string_view text);
  void apply_file(const std::filesystem::path& path);

  /// Applies the dcpt switch. Idempotent.
  TrainConfig resolved() const;
  void validate() const;
  std::uint64_t digest() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace cpt
