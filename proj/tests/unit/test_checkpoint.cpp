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

#include <filesystem>
#include <functional>

#include "cpt/binary_io.hpp"
#include "cpt/checkpoint.hpp"
#include "cpt/error.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace cpt;
using namespace cpt::testing;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpt_unit_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

WorkbenchState adapted_state(const TrainConfig& cfg) {
  WorkbenchState st = WorkbenchState::initialize(cfg);
  pretrain_base(st, general_pool(), cfg);
  continual_adapt(st, domain_pool(), general_pool(), cfg);
  return st;
}

}  // namespace

TEST_CASE("save, load, save gives identical bytes") {
  const TrainConfig cfg = small_config();
  WorkbenchState st = adapted_state(cfg);
  const auto bytes = encode_checkpoint(st, cfg);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SNRC");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.config == cfg);
  CHECK(states_equal(back.state, st));
  CHECK(encode_checkpoint(back.state, back.config) == bytes);

  // Mid-stage state with a pending snapshot and dataset.
  begin_adapt_stage(st, domain_pool(8), general_pool(), cfg);
  run_pending_stage(st, cfg, 1);
  save_checkpoint(scratch("mid.snrc"), st, cfg);
  const Checkpoint mid = load_checkpoint(scratch("mid.snrc"));
  REQUIRE(mid.state.pending.has_value());
  CHECK(mid.state.pending->snapshot == st.pending->snapshot);
  CHECK(mid.state.pending->dataset == st.pending->dataset);
  CHECK(mid.state.pending->tokenizer_epochs_done == 1);
  CHECK(encode_checkpoint(mid.state, mid.config) == encode_checkpoint(st, cfg));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TrainConfig cfg = small_config();
  cfg.epochs = 10;
  WorkbenchState base = WorkbenchState::initialize(cfg);
  pretrain_base(base, general_pool(), cfg);

  WorkbenchState straight = base;
  continual_adapt(straight, domain_pool(), general_pool(), cfg);

  for (std::size_t cut : {5, 10, 13}) {
    WorkbenchState first = base;
    begin_adapt_stage(first, domain_pool(), general_pool(), cfg);
    const StageReport partial = run_pending_stage(first, cfg, cut);
    CHECK_FALSE(partial.completed);
    save_checkpoint(scratch("cut.snrc"), first, cfg);

    Checkpoint resumed = load_checkpoint(scratch("cut.snrc"));
    const StageReport rest = run_pending_stage(resumed.state, resumed.config);
    CHECK(rest.completed);
    CHECK(states_equal(resumed.state, straight));
    CHECK(encode_checkpoint(resumed.state, cfg) == encode_checkpoint(straight, cfg));
  }
}

TEST_CASE("corruption is reported with distinct errors") {
  const TrainConfig cfg = small_config();
  const WorkbenchState st = adapted_state(cfg);
  const auto good = encode_checkpoint(st, cfg);

  auto magic = good;
  magic[0] = 'X';
  CHECK(kind_of([&] { decode_checkpoint(magic); }) == ErrorKind::BadMagic);

  auto version = good;
  version[4] = 7;
  CHECK(kind_of([&] { decode_checkpoint(version); }) == ErrorKind::VersionMismatch);

  // Flip one character of the embedded config text.
  auto config = good;
  config[12] ^= 0x01;
  CHECK(kind_of([&] { decode_checkpoint(config); }) == ErrorKind::DigestMismatch);

  auto payload = good;
  payload[payload.size() / 2] ^= 0x40;
  CHECK(kind_of([&] { decode_checkpoint(payload); }) == ErrorKind::DigestMismatch);

  auto digest = good;
  digest.back() ^= 0xff;
  CHECK(kind_of([&] { decode_checkpoint(digest); }) == ErrorKind::DigestMismatch);

  for (std::size_t keep : {std::size_t{3}, std::size_t{10}, good.size() / 3, good.size() - 1}) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
    CHECK(kind_of([&] { decode_checkpoint(cut); }) == ErrorKind::Truncated);
  }

  CHECK(kind_of([&] { load_checkpoint(scratch("does-not-exist.snrc")); }) == ErrorKind::Io);
}
