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
#include <vector>

#include "cpt/config.hpp"
#include "cpt/trainer.hpp"

namespace cpt {

// SNRC layout (little-endian):
//   "SNRC" | u32 version | str config text | u64 config digest |
//   u32 stage | u8 base done |
//   tokenizer encoder, estimator, model encoder (u32 in, hidden, out; u64 n; n f64) |
//   head (u32 in, out; u64 n; n f64) | codebook (u32 K, D; K*D f64 codes; K f64 usage) |
//   tokenizer Adam, model Adam (u64 step; f64 beta1, beta2, eps; u64 n; n f64 m; n f64 v) |
//   adaptive pool | u8 pending [pending stage] | u64 FNV-1a of every preceding byte
//
// Pools inside a checkpoint keep 64-bit features so a resumed run sees exactly
// the values the interrupted one did.

inline constexpr std::uint32_t kSnrcVersion = 1;

struct Checkpoint {
  TrainConfig config;
  WorkbenchState state;
};

std::vector<std::uint8_t> encode_checkpoint(const WorkbenchState& state, const TrainConfig& config);
/// Throws BadMagic, VersionMismatch, Truncated or DigestMismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const WorkbenchState& state, const TrainConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cpt
