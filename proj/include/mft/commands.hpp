#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mft/config.hpp"
#include "mft/data.hpp"
#include "mft/trainer.hpp"

namespace mft {

struct PreparedData {
  MultiDomainDataset dataset;
  Vocabulary vocab;
  EncoderConfig encoder;  // vocab_size set from the built vocabulary
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

// Loads or generates the corpus, subsamples the training split, and builds
// the vocabulary from the training split.
PreparedData prepare_data(const ExperimentConfig& config);

EncoderState initial_encoder(const EncoderConfig& encoder, std::size_t num_classes, std::uint64_t seed);

struct RunOutcome {
  std::vector<EvalResult> per_seed;
  std::vector<std::string> checkpoints;
  double mean_macro = 0.0;
};

// Trains the configured method for each seed and writes, under the output
// directory: effective_config.txt, metrics.csv, summary.csv, summary.txt and
// checkpoints/.
RunOutcome cmd_run(const ExperimentConfig& config);

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  double macro = 0.0;
};

// One run per axis value (lambda, mft_epochs or taps); writes sweep.csv.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config);

// Domain-probe accuracy per layer for the configured checkpoint; writes
// probe.csv.
std::vector<std::pair<std::size_t, double>> cmd_probe(const ExperimentConfig& config);

struct TypicalityRow {
  std::string domain;
  std::string extreme;  // "high" or "low"
  std::size_t rank = 0;
  std::int64_t instance_id = 0;
  TypicalityScore score;
  std::string text;
};

// Highest- and lowest-typicality training instances per domain; writes
// typicality_report.csv.
std::vector<TypicalityRow> cmd_typicality_report(const ExperimentConfig& config);

// Writes the synthetic corpus described by the config's synth.* keys.
MultiDomainDataset cmd_synth_gen(const ExperimentConfig& config);

std::string format_summary_table(const std::string& method, const std::vector<std::string>& domain_names,
                                 const std::vector<EvalResult>& per_seed);

}  // namespace mft
