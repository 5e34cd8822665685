// Command-line entry point: mft <verb> [--config FILE] [--set key=value]...
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "mft/commands.hpp"
#include "mft/config.hpp"
#include "mft/error.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_path, "key = value config file");
  cmd->add_option("-s,--set", common.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("-o,--output", common.output, "output directory (same as --set output=DIR)");
}

mft::ExperimentConfig resolve(const Common& common, const std::vector<std::string>& extra) {
  mft::ConfigMap map = common.config_path.empty() ? mft::ConfigMap() : mft::ConfigMap::load(common.config_path);
  for (const auto& o : common.overrides) map.apply_override(o);
  for (const auto& o : extra) map.apply_override(o);
  if (!common.output.empty()) map.set("output", common.output);
  return mft::materialize(map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta fine-tuning experiments over a mini transformer"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint;
  std::string layer;
  std::string axis;
  std::string values;
  std::size_t top_n = 0;

  auto* run = app.add_subcommand("run", "train the configured method over all seeds");
  add_common(run, common);
  auto* sweep = app.add_subcommand("sweep", "one run per value of lambda, mft_epochs or taps");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "lambda | mft_epochs | taps");
  sweep->add_option("--values", values, "';'-separated axis values");
  auto* probe = app.add_subcommand("probe", "domain-probe accuracy of a checkpoint");
  add_common(probe, common);
  probe->add_option("--checkpoint", checkpoint, "checkpoint file");
  probe->add_option("--layer", layer, "layer index or 'all'");
  auto* report = app.add_subcommand("typicality-report", "highest and lowest typicality instances per domain");
  add_common(report, common);
  report->add_option("--checkpoint", checkpoint, "checkpoint file (default: fresh encoder of the first seed)");
  report->add_option("--top-n", top_n, "rows per extreme and domain");
  auto* synth = app.add_subcommand("synth-gen", "write the synthetic corpus");
  add_common(synth, common);

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::string> extra;
    if (!checkpoint.empty()) extra.push_back("checkpoint=" + checkpoint);
    if (!layer.empty()) extra.push_back("probe.layer=" + layer);
    if (!axis.empty()) extra.push_back("sweep.axis=" + axis);
    if (!values.empty()) extra.push_back("sweep.values=" + values);
    if (top_n > 0) extra.push_back("report.top_n=" + std::to_string(top_n));
    const mft::ExperimentConfig config = resolve(common, extra);

    if (*run) {
      const auto outcome = mft::cmd_run(config);
      std::printf("%s: mean macro accuracy %.4f over %zu seed(s); outputs in %s\n",
                  mft::to_string(config.method).c_str(), outcome.mean_macro, outcome.per_seed.size(),
                  config.output.c_str());
    } else if (*sweep) {
      const auto rows = mft::cmd_sweep(config);
      for (const auto& r : rows) std::printf("%s=%s seed %llu: %.4f\n", config.sweep_axis.c_str(), r.value.c_str(),
                                             static_cast<unsigned long long>(r.seed), r.macro);
    } else if (*probe) {
      for (const auto& [l, acc] : mft::cmd_probe(config)) std::printf("layer %zu: domain probe accuracy %.4f\n", l, acc);
    } else if (*report) {
      const auto rows = mft::cmd_typicality_report(config);
      for (const auto& r : rows) {
        std::printf("%s %s #%zu id=%lld t=%.6f  %s\n", r.domain.c_str(), r.extreme.c_str(), r.rank,
                    static_cast<long long>(r.instance_id), r.score.value, r.text.c_str());
      }
    } else if (*synth) {
      const auto ds = mft::cmd_synth_gen(config);
      std::printf("wrote %zu/%zu/%zu instances over %zu domains to %s\n", ds.train.size(), ds.dev.size(),
                  ds.test.size(), ds.num_domains(), config.output.c_str());
    }
  } catch (const mft::Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", std::string(mft::to_string(e.kind())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 3;
  }
  return 0;
}
