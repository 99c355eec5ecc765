// Command-line front end: generate, pretrain, run, report, check.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zscl/error.hpp"
#include "zscl/experiment.hpp"
#include "zscl/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace zscl;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string order;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else {
    cfg.recipe = preset("FT");
    cfg.label = "FT";
  }
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.order.empty()) {
    cfg.order.clear();
    cfg.order_name = c.order;
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  if (needs_config) opt->required();
  cmd->add_option("--seed", c.seeds, "seed(s); overrides the config");
  cmd->add_option("--out", c.out, "output directory; overrides the config");
}

std::vector<RunManifest> collect_manifests(const std::vector<std::string>& inputs) {
  std::vector<RunManifest> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_regular_file(p)) {
      out.push_back(load_manifest(p));
      continue;
    }
    if (!fs::is_directory(p)) throw IoError("no such manifest or directory: " + in);
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() == "manifest.json") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& f : found) out.push_back(load_manifest(f));
  }
  if (out.empty()) throw IoError("no manifests found");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot-preserving continual learning on a synthetic two-tower benchmark"};
  app.require_subcommand(1);

  Common gen_opts, pre_opts, run_opts;
  auto* gen = app.add_subcommand("generate", "write benchmark data as CSV");
  add_common(gen, gen_opts, false);

  auto* pre = app.add_subcommand("pretrain", "pretrain (or load the cached) starting model");
  add_common(pre, pre_opts, false);

  auto* run = app.add_subcommand("run", "run a continual-learning experiment");
  add_common(run, run_opts, true);
  run->add_option("--order", run_opts.order, "named task order")->check(CLI::IsMember(order_names()));

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "aggregate run manifests into a comparison table");
  rep->add_option("inputs", report_inputs, "manifest files or directories searched for manifest.json")->required();
  rep->add_option("--out", report_out, "directory for report.csv and report.txt");

  std::size_t check_configs = 20;
  auto* chk = app.add_subcommand("check", "run the built-in property suite");
  chk->add_option("--configs", check_configs, "seeded configurations per gradient check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const ExperimentConfig cfg = load(gen_opts);
      for (auto seed : cfg.seeds) {
        const fs::path dir = cfg.output_dir / ("seed-" + std::to_string(seed)) / "data";
        const auto files = write_benchmark(build_benchmark(cfg.benchmark, seed), dir);
        std::printf("seed %llu: %zu files under %s\n", static_cast<unsigned long long>(seed), files.size(),
                    dir.string().c_str());
      }
    } else if (*pre) {
      const ExperimentConfig cfg = load(pre_opts);
      const fs::path cache = cfg.pretrain_cache.empty() ? cfg.output_dir / "pretrained" : cfg.pretrain_cache;
      for (auto seed : cfg.seeds) {
        const Prepared p = prepare(cfg.benchmark, seed, cache);
        std::printf("seed %llu: %s%s\n", static_cast<unsigned long long>(seed), p.checkpoint.string().c_str(),
                    p.from_cache ? " (cached)" : "");
        for (const auto& t : p.bench.tasks) {
          std::printf("  %-12s zero-shot %.2f%%\n", t.name.c_str(),
                      100.0 * evaluate(p.pretrained, t, cfg.eval_mode, p.bench.tasks));
        }
      }
    } else if (*run) {
      const ExperimentConfig cfg = load(run_opts);
      const auto manifests = run_experiment(cfg);
      for (const auto& m : manifests) {
        std::printf("seed %llu: %s (%.1fs)\n", static_cast<unsigned long long>(m.seed),
                    (m.dir / "manifest.json").string().c_str(), m.wall_clock_seconds);
      }
      std::fputs(report_text(emit_report(manifests)).c_str(), stdout);
    } else if (*rep) {
      const Report r = emit_report(collect_manifests(report_inputs));
      std::fputs(report_text(r).c_str(), stdout);
      if (!report_out.empty()) {
        write_file_atomic(fs::path(report_out) / "report.csv", report_csv(r));
        write_file_atomic(fs::path(report_out) / "report.txt", report_text(r));
      }
    } else if (*chk) {
      bool all = true;
      for (const auto& c : run_property_checks(check_configs)) {
        std::printf("%s %-24s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        all = all && c.passed;
      }
      return all ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    // what() is "<key>: <message>"; print the key once.
    std::string msg = e.what();
    if (msg.rfind(e.key() + ": ", 0) == 0) msg.erase(0, e.key().size() + 2);
    std::fprintf(stderr, "config error [%s]: %s\n", e.key().c_str(), msg.c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
