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

// cptw: data generation, dataset construction, training, evaluation and
// reporting for the continual pre-training workbench.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpt/checkpoint.hpp"
#include "cpt/config.hpp"
#include "cpt/corpus.hpp"
#include "cpt/error.hpp"
#include "cpt/evaluation.hpp"
#include "cpt/metrics.hpp"
#include "cpt/rng.hpp"
#include "cpt/sampler.hpp"
#include "cpt/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cpt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

/// Raised for invalid flag values discovered after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config resolution: defaults or checkpoint, then --config file, then flags.

struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> lambda_reg;
  std::optional<double> mu_reg;
  std::optional<double> lambda_contra;
  std::optional<double> gamma;
  std::optional<double> tau;
  std::optional<double> mask_ratio;
  std::optional<std::size_t> codebook_size;
  bool no_reinit = false;
  bool no_contrastive = false;
  bool no_sampling = false;
  bool dcpt = false;

  void attach(CLI::App& cmd, bool ablations) {
    cmd.add_option("--config", config_path, "Flat key = value config file")->check(CLI::ExistingFile);
    cmd.add_option("--seed", seed, "Base seed");
    cmd.add_option("--epochs", epochs, "Epochs per phase");
    cmd.add_option("--lr", lr, "Adam learning rate");
    cmd.add_option("--lambda-reg", lambda_reg, "Tokenizer encoder regularizer weight");
    cmd.add_option("--mu-reg", mu_reg, "Model distillation weight");
    cmd.add_option("--lambda-contra", lambda_contra, "Contrastive code loss weight");
    cmd.add_option("--gamma", gamma, "Usage EMA decay");
    cmd.add_option("--tau", tau, "Contrastive temperature");
    cmd.add_option("--mask-ratio", mask_ratio, "Masked fraction of tokens");
    cmd.add_option("--codebook-size", codebook_size, "Number of codes");
    if (ablations) {
      cmd.add_flag("--no-reinit", no_reinit, "Disable code reinitialization");
      cmd.add_flag("--no-contrastive", no_contrastive, "Disable the contrastive code loss");
      cmd.add_flag("--no-sampling", no_sampling, "Adapt on the raw domain pool");
      cmd.add_flag("--dcpt", dcpt, "Direct continual pre-training baseline");
    }
  }

  TrainConfig resolve(TrainConfig cfg) const {
    if (!config_path.empty()) cfg.apply_file(config_path);
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    if (lr) cfg.lr = *lr;
    if (lambda_reg) cfg.lambda_reg = *lambda_reg;
    if (mu_reg) cfg.mu_reg = *mu_reg;
    if (lambda_contra) cfg.lambda_contra = *lambda_contra;
    if (gamma) cfg.gamma = *gamma;
    if (tau) cfg.tau = *tau;
    if (mask_ratio) cfg.mask_ratio = *mask_ratio;
    if (codebook_size) cfg.codebook_size = *codebook_size;
    cfg.no_reinit = cfg.no_reinit || no_reinit;
    cfg.no_contrastive = cfg.no_contrastive || no_contrastive;
    cfg.no_sampling = cfg.no_sampling || no_sampling;
    cfg.dcpt = cfg.dcpt || dcpt;
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Run manifest.

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_json(const TrainConfig& cfg) {
  json out = json::object();
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

struct RunManifest {
  std::string command;
  std::string config_path;
  std::optional<TrainConfig> config;
  std::map<std::string, std::string> inputs;
  fs::path out_dir;
  std::map<std::string, std::uint64_t> seeds;

  void write() const {
    json j;
    j["command"] = command;
    j["config_path"] = config_path;
    j["config"] = config ? config_json(*config) : json(nullptr);
    j["inputs"] = inputs;
    j["out"] = out_dir.string();
    j["seeds"] = seeds;
    j["timestamp"] = utc_timestamp();
    const fs::path path = out_dir / ("run-" + command + ".json");
    std::ofstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
    f << j.dump(2) << '\n';
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_log(const fs::path& path, const std::vector<MetricRecord>& log) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  write_records(f, log);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path labels_for(const fs::path& pool) {
  fs::path p = pool;
  return p.replace_extension(".labels");
}

// ---------------------------------------------------------------------------
// gen-data

DomainSpec parse_domain(const json& d) {
  DomainSpec s;
  try {
    s.name = d.at("name").get<std::string>();
    s.clip_count = d.at("clips").get<std::size_t>();
    s.t_min = d.value("t_min", std::size_t{16});
    s.t_max = d.value("t_max", s.t_min);
    s.seed = d.value("seed", std::uint64_t{0});
    s.secondary_prob = d.value("secondary_prob", 0.0);
    for (const auto& c : d.at("clusters")) {
      s.clusters.push_back({c.at("mean").get<std::vector<double>>(), c.value("covscale", 1.0)});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("domain spec: ") + e.what());
  }
  return s;
}

int cmd_gen_data(const std::string& spec_path, const fs::path& out, std::optional<std::uint64_t> seed) {
  json spec;
  try {
    spec = json::parse(read_text(spec_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, "spec " + spec_path + ": " + e.what());
  }
  if (!spec.contains("domains") || !spec["domains"].is_array()) {
    fail(ErrorKind::InvalidArgument, "spec " + spec_path + ": missing \"domains\" array");
  }
  std::vector<DomainSpec> specs;
  for (const auto& d : spec["domains"]) specs.push_back(parse_domain(d));
  if (seed) {
    for (std::size_t i = 0; i < specs.size(); ++i) specs[i].seed = derive_seed(*seed, {i});
  }
  const std::vector<LabeledPool> pools = generate_domains(specs);
  ensure_dir(out);
  RunManifest m{"gen-data", "", std::nullopt, {{"spec", spec_path}}, out, {}};
  for (std::size_t i = 0; i < pools.size(); ++i) {
    save_pool(pools[i].pool, out / (specs[i].name + ".snrf"));
    save_labels(pools[i], out / (specs[i].name + ".labels"));
    m.seeds[specs[i].name] = specs[i].seed;
    std::printf("%s: %zu clips, D=%zu, %zu classes\n", specs[i].name.c_str(), pools[i].pool.size(),
                pools[i].pool.dim(), pools[i].class_count);
  }
  m.write();
  return 0;
}

// ---------------------------------------------------------------------------
// build-dataset

struct DatasetArgs {
  std::string task, general, adaptive;
  std::size_t budget = 0;
  std::uint32_t stage = 1;
};

int cmd_build_dataset(const DatasetArgs& a, const ConfigFlags& flags, const fs::path& out) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  const CorpusPool task = load_pool(a.task);
  const CorpusPool general = load_pool(a.general);
  const CorpusPool adaptive = a.adaptive.empty() ? CorpusPool("adaptive", {}, task.dim()) : load_pool(a.adaptive);
  const std::size_t budget = a.budget ? a.budget : (cfg.budget ? cfg.budget : task.size());
  const AdaptiveDataset ds =
      build_adaptive_dataset(task, general, adaptive, budget, {cfg.ratio_task, cfg.ratio_general, cfg.ratio_adaptive},
                             derive_seed(cfg.seed, {a.stage}),
                             SamplerOptions{cfg.clusters, cfg.query_fraction, cfg.kmeans_iters}, a.stage);
  ensure_dir(out);
  save_pool(ds.pool, out / "dataset.snrf");
  write_manifest(ds, out / "manifest.tsv");
  RunManifest m{"build-dataset", flags.config_path, cfg, {{"task", a.task}, {"general", a.general}}, out,
                {{"seed", cfg.seed}}};
  if (!a.adaptive.empty()) m.inputs["adaptive"] = a.adaptive;
  m.write();
  std::printf("dataset: %zu clips (budget %zu)\n", ds.pool.size(), budget);
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain / adapt

/// A zero-norm vector that appears mid-training means the parameters diverged.
template <typename F>
StageReport train_guarded(F&& run) {
  try {
    return run();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DegenerateVector) {
      fail(ErrorKind::NumericalAbort, std::string("training diverged: ") + e.what());
    }
    throw;
  }
}

void print_stage(const StageReport& r) {
  std::printf("stage %u: dataset %zu clips, utilization %.3f, perplexity %.2f, model drift %.3g\n", r.stage,
              r.dataset_size, r.codebook_utilization, r.codebook_perplexity, r.model_drift);
}

int cmd_pretrain(const std::string& general_path, const ConfigFlags& flags, const fs::path& out) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  const CorpusPool general = load_pool(general_path);
  if (general.dim() != cfg.dim) {
    fail(ErrorKind::DimensionMismatch, "pool dimension " + std::to_string(general.dim()) + " != config dim " +
                                           std::to_string(cfg.dim));
  }
  WorkbenchState st = WorkbenchState::initialize(cfg);
  const StageReport r = train_guarded([&] { return pretrain_base(st, general, cfg); });
  ensure_dir(out);
  save_checkpoint(out / "checkpoint.snrc", st, cfg);
  write_log(out / "log.tsv", r.log);
  RunManifest{"pretrain", flags.config_path, cfg, {{"general", general_path}}, out, {{"seed", cfg.seed}}}.write();
  print_stage(r);
  return 0;
}

int cmd_adapt(const std::string& ckpt_path, const std::string& domain_path, const std::string& general_path,
              const ConfigFlags& flags, const fs::path& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  const TrainConfig cfg = flags.resolve(ck.config);
  if (cfg.dim != ck.config.dim || cfg.hidden != ck.config.hidden || cfg.codebook_size != ck.config.codebook_size) {
    throw UsageError("shape keys (dim, hidden, codebook_size) cannot change after pre-training");
  }
  const CorpusPool domain = load_pool(domain_path);
  const CorpusPool general = load_pool(general_path);
  const StageReport r = train_guarded([&] { return continual_adapt(ck.state, domain, general, cfg); });
  ensure_dir(out);
  save_checkpoint(out / "checkpoint.snrc", ck.state, cfg);
  write_log(out / "log.tsv", r.log);
  RunManifest{"adapt",
              flags.config_path,
              cfg,
              {{"checkpoint", ckpt_path}, {"domain", domain_path}, {"general", general_path}},
              out,
              {{"seed", cfg.seed}}}
      .write();
  print_stage(r);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, retention, baseline;
  std::vector<std::string> downstream;
  std::uint64_t probe_seed = 0;
};

int cmd_eval(const EvalArgs& a, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const LabeledPool retention = load_labeled_pool(a.retention, labels_for(a.retention));
  std::vector<LabeledPool> downstream;
  for (const auto& p : a.downstream) downstream.push_back(load_labeled_pool(p, labels_for(p)));
  std::optional<double> baseline;
  if (!a.baseline.empty()) baseline = EvalReport::from_text(read_text(a.baseline)).retention_map;
  const EvalOptions opt{0.6, a.probe_seed, ProbeOptions{}};
  const EvalReport report = evaluate(ck.state, retention, downstream, opt, baseline);
  ensure_dir(out);
  write_text(out / "eval.txt", report.to_text());
  RunManifest m{"eval", "", ck.config, {{"checkpoint", a.checkpoint}, {"retention", a.retention}}, out,
                {{"probe", a.probe_seed}}};
  for (std::size_t i = 0; i < a.downstream.size(); ++i) m.inputs["downstream" + std::to_string(i)] = a.downstream[i];
  if (!a.baseline.empty()) m.inputs["baseline"] = a.baseline;
  m.write();
  std::printf("retention mAP %.2f", report.retention_map);
  if (report.forgetting_rate) std::printf(", FR %.2f", *report.forgetting_rate);
  std::printf("\n");
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string run;
  EvalReport eval;
  std::optional<double> fr;
};

int cmd_report(const fs::path& run_dir, const fs::path& out) {
  if (!fs::is_directory(run_dir)) fail(ErrorKind::Io, "not a directory: " + run_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (e.is_regular_file() && e.path().filename() == "eval.txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::InvalidArgument, "no eval.txt under " + run_dir.string());

  std::vector<ReportRow> rows;
  std::vector<std::string> domains;
  for (const auto& f : files) {
    ReportRow row{fs::relative(f.parent_path(), run_dir).string(), EvalReport::from_text(read_text(f)), std::nullopt};
    row.eval.validate();
    if (row.eval.baseline_map) row.fr = forgetting_rate(*row.eval.baseline_map, row.eval.retention_map);
    for (const auto& d : row.eval.domains) {
      if (std::find(domains.begin(), domains.end(), d.domain) == domains.end()) domains.push_back(d.domain);
    }
    rows.push_back(std::move(row));
  }

  std::vector<int> widths;
  for (const auto& d : domains) widths.push_back(std::max(10, static_cast<int>(d.size()) + 6));
  std::ostringstream t;
  t << std::fixed;
  t << std::left << std::setw(24) << "run" << std::right << std::setw(6) << "stage" << std::setw(9) << "mAP"
    << std::setw(9) << "FR";
  for (std::size_t i = 0; i < domains.size(); ++i) {
    t << std::setw(widths[i]) << (domains[i] + " acc") << std::setw(widths[i]) << (domains[i] + " F1");
  }
  t << std::setw(12) << "perplexity" << '\n';
  json j = json::array();
  for (const auto& r : rows) {
    t << std::left << std::setw(24) << r.run << std::right << std::setw(6) << r.eval.stage << std::setw(9)
      << std::setprecision(1) << r.eval.retention_map;
    if (r.fr) {
      t << std::setw(9) << std::setprecision(1) << round_to(*r.fr, 1);
    } else {
      t << std::setw(9) << "-";
    }
    json jd = json::object();
    for (std::size_t i = 0; i < domains.size(); ++i) {
      const std::string& d = domains[i];
      const auto it = std::find_if(r.eval.domains.begin(), r.eval.domains.end(),
                                   [&](const DomainScore& s) { return s.domain == d; });
      if (it == r.eval.domains.end()) {
        t << std::setw(widths[i]) << "-" << std::setw(widths[i]) << "-";
      } else {
        t << std::setw(widths[i]) << std::setprecision(1) << it->accuracy << std::setw(widths[i]) << it->macro_f1;
        jd[d] = {{"accuracy", it->accuracy}, {"macro_f1", it->macro_f1}};
      }
    }
    t << std::setw(12) << std::setprecision(2) << r.eval.codebook_perplexity << '\n';
    j.push_back({{"run", r.run},
                 {"stage", r.eval.stage},
                 {"retention_map", r.eval.retention_map},
                 {"baseline_map", r.eval.baseline_map ? json(*r.eval.baseline_map) : json(nullptr)},
                 {"forgetting_rate", r.fr ? json(*r.fr) : json(nullptr)},
                 {"codebook_utilization", r.eval.codebook_utilization},
                 {"codebook_perplexity", r.eval.codebook_perplexity},
                 {"domains", jd}});
  }
  const fs::path dest = out.empty() ? run_dir : out;
  ensure_dir(dest);
  write_text(dest / "report.txt", t.str());
  write_text(dest / "report.json", j.dump(2) + "\n");
  std::fputs(t.str().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual pre-training workbench"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string out;
  std::optional<std::uint64_t> gen_seed;
  std::string spec;
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic domain pools from a JSON spec");
  gen->add_option("--spec", spec, "JSON file with a \"domains\" array")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Replace every domain seed by one derived from this seed");

  DatasetArgs ds;
  ConfigFlags ds_flags;
  auto* build = app.add_subcommand("build-dataset", "Build a domain-adaptive dataset");
  build->add_option("--task", ds.task, "Task pool (.snrf)")->required()->check(CLI::ExistingFile);
  build->add_option("--general", ds.general, "General pool (.snrf)")->required()->check(CLI::ExistingFile);
  build->add_option("--adaptive", ds.adaptive, "Adaptive pool (.snrf)")->check(CLI::ExistingFile);
  build->add_option("--budget", ds.budget, "Dataset size (default: config budget or task pool size)");
  build->add_option("--stage", ds.stage, "Stage index recorded in the manifest");
  build->add_option("--out", out, "Output directory")->required();
  ds_flags.attach(*build, false);

  std::string general;
  ConfigFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "Base stage on the general pool");
  pre->add_option("--general", general, "General pool (.snrf)")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out, "Output directory")->required();
  pre_flags.attach(*pre, false);

  std::string ckpt, domain;
  ConfigFlags ad_flags;
  auto* adapt = app.add_subcommand("adapt", "One continual adaptation stage");
  adapt->add_option("--checkpoint", ckpt, "Input checkpoint (.snrc)")->required()->check(CLI::ExistingFile);
  adapt->add_option("--domain", domain, "Domain pool (.snrf)")->required()->check(CLI::ExistingFile);
  adapt->add_option("--general", general, "General pool (.snrf)")->required()->check(CLI::ExistingFile);
  adapt->add_option("--out", out, "Output directory")->required();
  ad_flags.attach(*adapt, true);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Retention, downstream probes and codebook health");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.snrc)")->required()->check(CLI::ExistingFile);
  eval->add_option("--retention", ev.retention, "Multi-label retention pool (.snrf with .labels)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--downstream", ev.downstream, "Downstream pools (.snrf with .labels)")->check(CLI::ExistingFile);
  eval->add_option("--baseline", ev.baseline, "eval.txt of the baseline model")->check(CLI::ExistingFile);
  eval->add_option("--seed", ev.probe_seed, "Probe split and initialization seed");
  eval->add_option("--out", out, "Output directory")->required();

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Tabulate every eval.txt under a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_option("--out", out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(spec, out, gen_seed);
    if (*build) return cmd_build_dataset(ds, ds_flags, out);
    if (*pre) return cmd_pretrain(general, pre_flags, out);
    if (*adapt) return cmd_adapt(ckpt, domain, general, ad_flags, out);
    if (*eval) return cmd_eval(ev, out);
    if (*report) return cmd_report(run_dir, out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == ErrorKind::NumericalAbort ? kExitNumerical : kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitUsage;
}
