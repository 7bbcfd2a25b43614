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

#include <cmath>
#include <filesystem>

#include "cpt/binary_io.hpp"
#include "cpt/corpus.hpp"
#include "cpt/error.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cpt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "cpt_unit_corpus";
  fs::create_directories(dir);
  return dir / name;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

DomainSpec two_cluster_spec() {
  DomainSpec s;
  s.name = "pm";
  std::vector<double> plus(4, 0.0), minus(4, 0.0);
  plus[0] = 5.0;
  minus[0] = -5.0;
  s.clusters = {{plus, 0.1}, {minus, 0.1}};
  s.clip_count = 40;
  s.t_min = 3;
  s.t_max = 9;
  s.seed = 17;
  return s;
}

}  // namespace

TEST_CASE("degenerate spec yields all-zero features") {
  DomainSpec s;
  s.name = "zero";
  s.clusters = {{{0.0, 0.0, 0.0}, 0.0}};
  s.clip_count = 3;
  s.t_min = s.t_max = 4;
  const CorpusPool p = generate_domain(s);
  REQUIRE(p.size() == 3);
  for (const auto& c : p.clips()) {
    CHECK(c.tokens() == 4);
    for (double v : c.features.flat()) CHECK(v == 0.0);
    CHECK(c.domain == "zero");
  }
}

TEST_CASE("generation is a pure function of its DomainSpec") {
  const DomainSpec s = two_cluster_spec();
  CHECK(encode_pool(generate_domain(s)) == encode_pool(generate_domain(s)));
  DomainSpec other = s;
  other.seed = 18;
  CHECK(encode_pool(generate_domain(other)) != encode_pool(generate_domain(s)));
}

TEST_CASE("clusters at +-5 e1 separate by the sign of the first pooled coordinate") {
  const LabeledPool lp = generate_labeled_domain(two_cluster_spec());
  for (std::size_t i = 0; i < lp.pool.size(); ++i) {
    const double x0 = lp.pool.pooled()(i, 0);
    CHECK((lp.labels[i][0] == 0 ? x0 > 0.9 : x0 < -0.9));
  }
}

TEST_CASE("pooled embeddings have unit norm and match the token mean") {
  const CorpusPool p = testing::random_pool(50, 6, 1, 12, 3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    double n2 = 0.0;
    for (double v : p.pooled().row(i)) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
    Matrix q(1, 6);
    std::copy(p.pooled().row(i).begin(), p.pooled().row(i).end(), q.row(0).begin());
    const double cos = testing::oracle_retrieval_scores(q, subset(p, std::vector<std::size_t>{i}, "x"))[0];
    CHECK(cos == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pool validation") {
  FeatureClip a{"a", "d", Matrix(2, 3, 1.0)};
  FeatureClip b{"a", "d", Matrix(2, 3, 1.0)};
  CHECK(kind_of([&] { CorpusPool("p", {a, b}); }) == ErrorKind::InvalidArgument);
  FeatureClip c{"c", "d", Matrix(2, 4, 1.0)};
  CHECK(kind_of([&] { CorpusPool("p", {a, c}); }) == ErrorKind::DimensionMismatch);
  FeatureClip e{"e", "d", Matrix(0, 3)};
  CHECK(kind_of([&] { CorpusPool("p", {e}); }) == ErrorKind::InvalidArgument);
  FeatureClip f{"f", "d", Matrix(1, 3, std::nan(""))};
  CHECK(kind_of([&] { CorpusPool("p", {f}); }) == ErrorKind::InvalidArgument);

  const CorpusPool ok("p", {a, FeatureClip{"z", "d", Matrix(5, 3, 2.0)}});
  CHECK(ok.index_of("z") == std::optional<std::size_t>(1));
  CHECK_FALSE(ok.contains("nope"));
  CHECK(ok.total_tokens() == 7);
}

TEST_CASE("spec validation and domain dimension checks") {
  DomainSpec s = two_cluster_spec();
  s.clip_count = 0;
  CHECK(kind_of([&] { generate_domain(s); }) == ErrorKind::InvalidArgument);
  s = two_cluster_spec();
  s.clusters[1].covscale = -1.0;
  CHECK(kind_of([&] { generate_domain(s); }) == ErrorKind::InvalidArgument);
  s = two_cluster_spec();
  s.clusters.clear();
  CHECK(kind_of([&] { generate_domain(s); }) == ErrorKind::InvalidArgument);

  DomainSpec t = two_cluster_spec();
  t.name = "other";
  for (auto& c : t.clusters) c.mean.push_back(0.0);
  const std::vector<DomainSpec> specs{two_cluster_spec(), t};
  CHECK(kind_of([&] { generate_domains(specs); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("secondary clusters give multi-hot labels") {
  DomainSpec s = two_cluster_spec();
  s.clusters.push_back({std::vector<double>{0, 5, 0, 0}, 0.1});
  s.secondary_prob = 0.5;
  s.clip_count = 200;
  const LabeledPool lp = generate_labeled_domain(s);
  std::size_t multi = 0;
  for (const auto& l : lp.labels) {
    multi += l.size() == 2;
    if (l.size() == 2) CHECK(l[0] < l[1]);
  }
  CHECK(multi > 60);
  CHECK(multi < 140);
}

TEST_CASE("SNRF layout and exact byte count") {
  FeatureClip c{"id", "dom", Matrix(1, 2)};
  c.features(0, 0) = 1.0;
  c.features(0, 1) = 2.0;
  const CorpusPool p("p", {c});
  const auto bytes = encode_pool(p);
  const std::size_t header = 4 + 4 + 4 + 4;
  const std::size_t per_clip = 4 + 2 + 4 + 3 + 4;
  CHECK(bytes.size() == header + per_clip + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SNRF");
  ByteReader r(bytes);
  r.raw(4);
  CHECK(r.u32() == kSnrfVersion);
  CHECK(r.u32() == 1);
  CHECK(r.u32() == 2);
  CHECK(r.str() == "id");
  CHECK(r.str() == "dom");
  CHECK(r.u32() == 1);
  CHECK(r.f32() == 1.0f);
  CHECK(r.f32() == 2.0f);
}

TEST_CASE("SNRF errors are distinct") {
  const auto good = encode_pool(testing::random_pool(3, 2, 1, 3, 1));
  auto bad = good;
  bad[0] = 'X';
  bad[1] = 'X';
  bad[2] = 'X';
  bad[3] = 'X';
  CHECK(kind_of([&] { decode_pool(bad, "x"); }) == ErrorKind::BadMagic);
  auto ver = good;
  ver[4] = 9;
  CHECK(kind_of([&] { decode_pool(ver, "x"); }) == ErrorKind::VersionMismatch);
  const std::vector<std::uint8_t> cut(good.begin(), good.end() - 3);
  CHECK(kind_of([&] { decode_pool(cut, "x"); }) == ErrorKind::Truncated);
  CHECK(kind_of([&] { load_pool(scratch("missing.snrf")); }) == ErrorKind::Io);
}

TEST_CASE("SNRF save/load round trip on random pools") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t d = 1 + rng.below(8);
    const CorpusPool p = testing::random_pool(rng.below(20), d, 1, 1 + rng.below(10), seed, "pool");
    const fs::path path = scratch("rt.snrf");
    save_pool(p, path);
    const CorpusPool back = load_pool(path);
    CHECK(back == p);
    CHECK(back.name() == "rt");
    CHECK(encode_pool(back) == encode_pool(p));
  }
}

TEST_CASE("labels sidecar round trip") {
  DomainSpec s = two_cluster_spec();
  s.secondary_prob = 0.3;
  const LabeledPool lp = generate_labeled_domain(s);
  save_pool(lp.pool, scratch("lab.snrf"));
  save_labels(lp, scratch("lab.labels"));
  const LabeledPool back = load_labeled_pool(scratch("lab.snrf"), scratch("lab.labels"));
  CHECK(back.pool == lp.pool);
  CHECK(back.labels == lp.labels);
  CHECK(back.class_count == lp.class_count);
}
