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

#include "cpt/checkpoint.hpp"

#include <string>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"

namespace cpt {

namespace {

void put_net(ByteWriter& w, const ToyNet& net) {
  w.u32(static_cast<std::uint32_t>(net.shape().input));
  w.u32(static_cast<std::uint32_t>(net.shape().hidden));
  w.u32(static_cast<std::uint32_t>(net.shape().output));
  w.u64(net.param_count());
  w.f64s(net.params());
}

ToyNet get_net(ByteReader& r) {
  NetShape shape;
  shape.input = r.u32();
  shape.hidden = r.u32();
  shape.output = r.u32();
  const std::uint64_t n = r.u64();
  ToyNet net(shape);
  require(n == net.param_count(), ErrorKind::DimensionMismatch, "checkpoint: network parameter count");
  const auto values = r.f64s(n);
  std::copy(values.begin(), values.end(), net.params().begin());
  return net;
}

void put_head(ByteWriter& w, const LinearHead& head) {
  w.u32(static_cast<std::uint32_t>(head.in()));
  w.u32(static_cast<std::uint32_t>(head.out()));
  w.u64(head.params().size());
  w.f64s(head.params());
}

LinearHead get_head(ByteReader& r) {
  const std::uint32_t in = r.u32();
  const std::uint32_t out = r.u32();
  const std::uint64_t n = r.u64();
  LinearHead head(in, out);
  require(n == head.params().size(), ErrorKind::DimensionMismatch, "checkpoint: head parameter count");
  const auto values = r.f64s(n);
  std::copy(values.begin(), values.end(), head.params().begin());
  return head;
}

void put_codebook(ByteWriter& w, const Codebook& cb) {
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.f64s(cb.codes.flat());
  w.f64s(cb.usage);
}

Codebook get_codebook(ByteReader& r) {
  const std::uint32_t k = r.u32();
  const std::uint32_t d = r.u32();
  Codebook cb;
  cb.codes = Matrix(k, d);
  const auto codes = r.f64s(static_cast<std::size_t>(k) * d);
  std::copy(codes.begin(), codes.end(), cb.codes.data());
  cb.usage = r.f64s(k);
  return cb;
}

void put_adam(ByteWriter& w, const AdamState& s) {
  w.u64(s.step);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u64(s.m.size());
  w.f64s(s.m);
  w.f64s(s.v);
}

AdamState get_adam(ByteReader& r) {
  AdamState s;
  s.step = r.u64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  const std::uint64_t n = r.u64();
  s.m = r.f64s(n);
  s.v = r.f64s(n);
  return s;
}

void put_pool(ByteWriter& w, const CorpusPool& pool) {
  w.str(pool.name());
  w.u32(static_cast<std::uint32_t>(pool.dim()));
  w.u64(pool.size());
  for (const auto& c : pool.clips()) {
    w.str(c.id);
    w.str(c.domain);
    w.u32(static_cast<std::uint32_t>(c.tokens()));
    w.f64s(c.features.flat());
  }
}

CorpusPool get_pool(ByteReader& r) {
  std::string name = r.str();
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  std::vector<FeatureClip> clips;
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureClip c;
    c.id = r.str();
    c.domain = r.str();
    const std::uint32_t t = r.u32();
    c.features = Matrix(t, dim);
    const auto values = r.f64s(static_cast<std::size_t>(t) * dim);
    std::copy(values.begin(), values.end(), c.features.data());
    clips.push_back(std::move(c));
  }
  return CorpusPool(std::move(name), std::move(clips), dim);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const WorkbenchState& state, const TrainConfig& config) {
  ByteWriter w;
  w.raw("SNRC");
  w.u32(kSnrcVersion);
  w.str(config.to_text());
  w.u64(config.digest());
  w.u32(state.stage);
  w.u8(state.base_done ? 1 : 0);
  put_net(w, state.tokenizer.encoder);
  put_net(w, state.tokenizer.estimator);
  put_net(w, state.model.encoder);
  put_head(w, state.model.head);
  put_codebook(w, state.tokenizer.codebook);
  put_adam(w, state.tokenizer_adam);
  put_adam(w, state.model_adam);
  put_pool(w, state.adaptive);
  w.u8(state.pending.has_value() ? 1 : 0);
  if (state.pending) {
    const StageProgress& p = *state.pending;
    w.u32(p.stage);
    w.u8(p.base ? 1 : 0);
    w.u64(p.tokenizer_epochs_done);
    w.u64(p.model_epochs_done);
    w.u32(p.snapshot.stage());
    put_net(w, p.snapshot.tokenizer_encoder());
    put_net(w, p.snapshot.model_encoder());
    put_codebook(w, p.snapshot.codebook());
    put_pool(w, p.dataset);
  }
  w.u64(fnv1a64(w.buffer()));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < 4) fail(ErrorKind::Truncated, "file shorter than the SNRC magic");
  if (r.raw(4) != "SNRC") fail(ErrorKind::BadMagic, "not an SNRC checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kSnrcVersion) {
    fail(ErrorKind::VersionMismatch,
         "SNRC version " + std::to_string(version) + ", expected " + std::to_string(kSnrcVersion));
  }
  const std::string text = r.str();
  const std::uint64_t digest = r.u64();
  if (fnv1a64(text) != digest) fail(ErrorKind::DigestMismatch, "checkpoint config digest does not match its config");

  Checkpoint ck;
  ck.config = TrainConfig::from_text(text);
  WorkbenchState& s = ck.state;
  s.stage = r.u32();
  s.base_done = r.u8() != 0;
  s.tokenizer.encoder = get_net(r);
  s.tokenizer.estimator = get_net(r);
  s.model.encoder = get_net(r);
  s.model.head = get_head(r);
  s.tokenizer.codebook = get_codebook(r);
  s.tokenizer_adam = get_adam(r);
  s.model_adam = get_adam(r);
  s.adaptive = get_pool(r);
  if (r.u8() != 0) {
    StageProgress p{Snapshot({}, {}, {}, 0), CorpusPool{}, 0, false, 0, 0};
    p.stage = r.u32();
    p.base = r.u8() != 0;
    p.tokenizer_epochs_done = r.u64();
    p.model_epochs_done = r.u64();
    const std::uint32_t snap_stage = r.u32();
    ToyNet tok = get_net(r);
    ToyNet model = get_net(r);
    Codebook cb = get_codebook(r);
    p.snapshot = Snapshot(std::move(tok), std::move(model), std::move(cb), snap_stage);
    p.dataset = get_pool(r);
    s.pending = std::move(p);
  }
  const std::size_t body = r.position();
  const std::uint64_t checksum = r.u64();
  if (checksum != fnv1a64(bytes.first(body))) fail(ErrorKind::DigestMismatch, "checkpoint checksum mismatch");
  if (r.remaining() != 0) fail(ErrorKind::BadMagic, "trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const WorkbenchState& state, const TrainConfig& config) {
  write_file(path, encode_checkpoint(state, config));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace cpt
