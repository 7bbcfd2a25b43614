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

#include "cpt/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"

namespace cpt {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed shares the size_t field kind");
using Field = std::variant<double TrainConfig::*, std::size_t TrainConfig::*, bool TrainConfig::*>;

struct KeyDef {
  const char* name;
  Field field;
};

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      {"lambda_reg", &TrainConfig::lambda_reg},
      {"mu_reg", &TrainConfig::mu_reg},
      {"lambda_contra", &TrainConfig::lambda_contra},
      {"gamma", &TrainConfig::gamma},
      {"tau", &TrainConfig::tau},
      {"max_negatives", &TrainConfig::max_negatives},
      {"lr", &TrainConfig::lr},
      {"epochs", &TrainConfig::epochs},
      {"batch_size", &TrainConfig::batch_size},
      {"mask_ratio", &TrainConfig::mask_ratio},
      {"init_scale", &TrainConfig::init_scale},
      {"codebook_size", &TrainConfig::codebook_size},
      {"dim", &TrainConfig::dim},
      {"hidden", &TrainConfig::hidden},
      {"seed", &TrainConfig::seed},
      {"no_reinit", &TrainConfig::no_reinit},
      {"no_contrastive", &TrainConfig::no_contrastive},
      {"no_sampling", &TrainConfig::no_sampling},
      {"dcpt", &TrainConfig::dcpt},
      {"clusters", &TrainConfig::clusters},
      {"query_fraction", &TrainConfig::query_fraction},
      {"kmeans_iters", &TrainConfig::kmeans_iters},
      {"budget", &TrainConfig::budget},
      {"ratio_task", &TrainConfig::ratio_task},
      {"ratio_general", &TrainConfig::ratio_general},
      {"ratio_adaptive", &TrainConfig::ratio_adaptive},
  };
  return defs;
}

std::string normalize_key(std::string_view key) {
  std::string k(key);
  for (char& c : k) {
    if (c == '-') c = '_';
  }
  return k;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  fail(ErrorKind::InvalidArgument, "bad value '" + std::string(value) + "' for config key " + std::string(key));
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view value) {
  T v{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) bad_value(key, value);
  return v;
}

double parse_double(std::string_view key, std::string_view value) {
  std::string s(value);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) bad_value(key, value);
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::set(std::string_view key_in, std::string_view value_in) {
  const std::string key = normalize_key(trim(key_in));
  const std::string_view value = trim(value_in);
  for (const auto& def : key_defs()) {
    if (key != def.name) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, double>) {
            this->*member = parse_double(key, value);
          } else if constexpr (std::is_same_v<T, bool>) {
            this->*member = parse_bool(key, value);
          } else {
            this->*member = parse_unsigned<T>(key, value);
          }
        },
        def.field);
    return;
  }
  fail(ErrorKind::InvalidArgument, "unknown config key '" + std::string(key_in) + "'");
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out;
  for (const auto& def : key_defs()) out.emplace_back(def.name);
  return out;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& def : key_defs()) {
    out += def.name;
    out += " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, double>) {
            out += format_double(this->*member);
          } else if constexpr (std::is_same_v<T, bool>) {
            out += (this->*member) ? "true" : "false";
          } else {
            out += std::to_string(this->*member);
          }
        },
        def.field);
    out += '\n';
  }
  return out;
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  TrainConfig cfg;
  cfg.apply_text(text);
  return cfg;
}

void TrainConfig::apply_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string_view l = line;
    if (auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    auto eq = l.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::InvalidArgument, "config line without '=': " + std::string(l));
    }
    set(l.substr(0, eq), l.substr(eq + 1));
  }
}

void TrainConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  TrainConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  if (c.dcpt) {
    c.no_reinit = true;
    c.no_contrastive = true;
    c.no_sampling = true;
    c.lambda_reg = 0.0;
    c.mu_reg = 0.0;
  }
  return c;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::InvalidArgument, "config: " + what); };
  check(lambda_reg >= 0.0, "lambda_reg must be >= 0");
  check(mu_reg >= 0.0, "mu_reg must be >= 0");
  check(lambda_contra >= 0.0, "lambda_contra must be >= 0");
  check(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
  check(tau > 0.0, "tau must be > 0");
  check(lr > 0.0, "lr must be > 0");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio must lie in (0,1)");
  check(init_scale > 0.0, "init_scale must be > 0");
  check(codebook_size >= 1, "codebook_size must be >= 1");
  check(dim >= 1 && hidden >= 1, "dim and hidden must be >= 1");
  check(clusters >= 1, "clusters must be >= 1");
  check(query_fraction > 0.0 && query_fraction <= 1.0, "query_fraction must lie in (0,1]");
  check(ratio_task >= 0 && ratio_general >= 0 && ratio_adaptive >= 0 &&
            std::abs(ratio_task + ratio_general + ratio_adaptive - 1.0) < 1e-9,
        "mix ratios must be non-negative and sum to 1");
}

std::uint64_t TrainConfig::digest() const { return fnv1a64(to_text()); }

}  // namespace cpt
