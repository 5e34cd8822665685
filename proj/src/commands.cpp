#include "mft/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace fs = std::filesystem;

namespace mft {

namespace {

std::string num(double value, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::Io, "cannot create directory " + dir.string());
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::string domain_label(const MultiDomainDataset& ds, int domain) {
  return domain < 0 ? "all" : ds.domain_names.at(static_cast<std::size_t>(domain));
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData data;
  data.dataset = config.synthetic() ? synth_generate(config.synth) : load_corpus(config.data);
  if (data.dataset.train.empty()) fail(ErrorKind::Configuration, "training split is empty");
  if (config.train_fraction < 1.0) {
    data.dataset = subsample_train(data.dataset, config.train_fraction, derive_seed(config.synth.seed, "subsample"));
  }
  data.vocab = build_vocab(data.dataset.train, config.vocab_max);
  data.encoder = config.encoder;
  data.encoder.vocab_size = data.vocab.size();
  data.train = encode_all(data.dataset.train, data.vocab, data.encoder.max_seq_len);
  data.dev = encode_all(data.dataset.dev, data.vocab, data.encoder.max_seq_len);
  data.test = encode_all(data.dataset.test, data.vocab, data.encoder.max_seq_len);
  return data;
}

EncoderState initial_encoder(const EncoderConfig& encoder, std::size_t num_classes, std::uint64_t seed) {
  return EncoderState::initialize(encoder, num_classes, derive_seed(seed, "encoder"));
}

std::string format_summary_table(const std::string& method, const std::vector<std::string>& domain_names,
                                 const std::vector<EvalResult>& per_seed) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "Method");
  out << buf;
  for (const auto& name : domain_names) {
    std::snprintf(buf, sizeof buf, " %10s", name.c_str());
    out << buf;
  }
  out << "       Avg.\n";
  std::snprintf(buf, sizeof buf, "%-12s", method.c_str());
  out << buf;
  const double n = static_cast<double>(per_seed.size());
  double macro = 0.0;
  for (std::size_t k = 0; k < domain_names.size(); ++k) {
    double mean = 0.0;
    bool present = false;
    for (const auto& r : per_seed) {
      auto it = r.per_domain.find(static_cast<int>(k));
      if (it != r.per_domain.end()) {
        mean += it->second / n;
        present = true;
      }
    }
    std::snprintf(buf, sizeof buf, " %10s", present ? num(100.0 * mean, 2).c_str() : "-");
    out << buf;
  }
  for (const auto& r : per_seed) macro += r.macro / n;
  std::snprintf(buf, sizeof buf, " %10s\n", num(100.0 * macro, 2).c_str());
  out << buf;
  return out.str();
}

RunOutcome cmd_run(const ExperimentConfig& config) {
  const fs::path out_dir(config.output);
  const PreparedData data = prepare_data(config);
  const auto& ds = data.dataset;
  const std::string hash = config.hash();
  const std::string method = to_string(config.method);
  make_dirs(out_dir);
  write_file(out_dir / "effective_config.txt", config.source.to_text());
  if (config.write_checkpoints) make_dirs(out_dir / "checkpoints");

  std::string metrics = "task,method,stage,domain,seed,epoch,l_tlc,l_sdc,total,accuracy,config_hash\n";
  RunOutcome outcome;
  for (auto seed : config.seeds) {
    TrainConfig train = config.train;
    train.seed = seed;
    const EncoderState initial = initial_encoder(data.encoder, ds.num_classes(), seed);
    MethodRun run = run_method(config.method, data.train, ds.num_domains(), initial, train);
    EvalResult eval = evaluate(run.models, data.test);
    eval.seed = seed;
    eval.config_hash = hash;

    // Per-epoch means of the logged batch losses, in first-seen order.
    struct Acc {
      double tlc = 0.0, sdc = 0.0, total = 0.0;
      std::size_t n = 0;
    };
    std::vector<std::tuple<std::string, int, std::size_t>> order;
    std::map<std::tuple<std::string, int, std::size_t>, Acc> acc;
    for (const auto& rec : run.models.trace) {
      const auto key = std::make_tuple(rec.stage, rec.domain, rec.epoch);
      auto [it, inserted] = acc.try_emplace(key);
      if (inserted) order.push_back(key);
      it->second.tlc += rec.loss.l_tlc;
      it->second.sdc += rec.loss.l_sdc;
      it->second.total += rec.loss.total;
      ++it->second.n;
    }
    const std::string prefix = csv_field(config.task) + "," + method + ",";
    for (const auto& key : order) {
      const Acc& a = acc.at(key);
      const double n = static_cast<double>(a.n);
      metrics += prefix + std::get<0>(key) + "," + csv_field(domain_label(ds, std::get<1>(key))) + "," +
                 std::to_string(seed) + "," + std::to_string(std::get<2>(key)) + "," + num(a.tlc / n, 8) + "," +
                 num(a.sdc / n, 8) + "," + num(a.total / n, 8) + ",," + hash + "\n";
    }
    for (const auto& [k, accuracy] : eval.per_domain) {
      metrics += prefix + "test," + csv_field(domain_label(ds, k)) + "," + std::to_string(seed) + ",,,,," +
                 num(accuracy) + "," + hash + "\n";
    }
    metrics += prefix + "test,macro," + std::to_string(seed) + ",,,,," + num(eval.macro) + "," + hash + "\n";

    if (config.write_checkpoints) {
      const std::string stem = method + "_seed" + std::to_string(seed) + "_";
      auto save = [&](const std::string& tag, const EncoderState& state) {
        const fs::path path = out_dir / "checkpoints" / (stem + tag + ".ckpt");
        save_checkpoint(path.string(), state);
        outcome.checkpoints.push_back(path.string());
      };
      if (run.meta) {
        save("meta", run.meta->state);
        write_file(out_dir / ("typicality_seed" + std::to_string(seed) + ".tsv"), run.meta->typicality.to_text());
      }
      if (run.models.shared) {
        save("shared", run.models.models.front());
      } else {
        for (std::size_t k = 0; k < run.models.models.size(); ++k) save(ds.domain_names[k], run.models.models[k]);
      }
    }
    outcome.per_seed.push_back(std::move(eval));
  }

  std::string summary = "task,method,seed";
  for (const auto& name : ds.domain_names) summary += "," + csv_field(name);
  summary += ",macro,config_hash\n";
  const double n = static_cast<double>(outcome.per_seed.size());
  std::vector<double> mean(ds.num_domains(), 0.0);
  for (const auto& r : outcome.per_seed) {
    summary += csv_field(config.task) + "," + method + "," + std::to_string(r.seed);
    for (std::size_t k = 0; k < ds.num_domains(); ++k) {
      auto it = r.per_domain.find(static_cast<int>(k));
      summary += "," + (it == r.per_domain.end() ? std::string() : num(it->second));
      if (it != r.per_domain.end()) mean[k] += it->second / n;
    }
    summary += "," + num(r.macro) + "," + hash + "\n";
    outcome.mean_macro += r.macro / n;
  }
  summary += csv_field(config.task) + "," + method + ",mean";
  for (double m : mean) summary += "," + num(m);
  summary += "," + num(outcome.mean_macro) + "," + hash + "\n";

  write_file(out_dir / "metrics.csv", metrics);
  write_file(out_dir / "summary.csv", summary);
  write_file(out_dir / "summary.txt", "Task: " + config.task + "\nSeeds: " + std::to_string(config.seeds.size()) +
                                          "\nTest accuracy (%)\n\n" +
                                          format_summary_table(method, ds.domain_names, outcome.per_seed));
  return outcome;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config) {
  static const std::map<std::string, std::string> axes{
      {"lambda", "train.lambda"}, {"mft_epochs", "train.mft_epochs"}, {"taps", "train.taps"}};
  auto axis = axes.find(config.sweep_axis);
  if (axis == axes.end()) {
    fail(ErrorKind::Configuration, "sweep.axis must be lambda, mft_epochs or taps, got '" + config.sweep_axis + "'");
  }
  if (config.sweep_values.empty()) fail(ErrorKind::Configuration, "sweep.values is empty");
  const fs::path out_dir(config.output);
  // Validate every value before training anything.
  std::vector<ExperimentConfig> runs;
  for (const auto& value : config.sweep_values) {
    ConfigMap map = config.source;
    map.set(axis->second, value);
    std::string tag = value;
    std::replace(tag.begin(), tag.end(), ',', '-');
    map.set("output", (out_dir / "sweep" / (config.sweep_axis + "_" + tag)).string());
    runs.push_back(materialize(map));
  }
  make_dirs(out_dir);
  write_file(out_dir / "effective_config.txt", config.source.to_text());
  std::vector<SweepRow> rows;
  std::string csv = "axis,value,seed,macro_accuracy,config_hash\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunOutcome outcome = cmd_run(runs[i]);
    for (const auto& r : outcome.per_seed) {
      rows.push_back({config.sweep_values[i], r.seed, r.macro});
      csv += config.sweep_axis + "," + csv_field(config.sweep_values[i]) + "," + std::to_string(r.seed) + "," +
             num(r.macro) + "," + config.hash() + "\n";
    }
  }
  write_file(out_dir / "sweep.csv", csv);
  return rows;
}

std::vector<std::pair<std::size_t, double>> cmd_probe(const ExperimentConfig& config) {
  if (config.checkpoint.empty()) fail(ErrorKind::Configuration, "probe needs a checkpoint");
  const EncoderState state = load_checkpoint(config.checkpoint);
  const PreparedData data = prepare_data(config);
  if (state.config.vocab_size != data.encoder.vocab_size) {
    fail(ErrorKind::Configuration, "checkpoint vocabulary size " + std::to_string(state.config.vocab_size) +
                                       " does not match the data vocabulary " +
                                       std::to_string(data.encoder.vocab_size));
  }
  std::vector<std::size_t> layers;
  if (config.probe_layer == "all") {
    for (std::size_t l = 1; l <= state.config.num_layers; ++l) layers.push_back(l);
  } else {
    layers.push_back(std::stoul(config.probe_layer));
  }
  ProbeOptions options;
  options.steps = config.probe_steps;
  std::vector<std::pair<std::size_t, double>> results;
  std::string csv = "layer,fit_size,test_size,accuracy,config_hash\n";
  for (auto l : layers) {
    const double accuracy = domain_probe(state, data.train, data.test, l, data.dataset.num_domains(), options);
    results.emplace_back(l, accuracy);
    csv += std::to_string(l) + "," + std::to_string(data.train.size()) + "," + std::to_string(data.test.size()) +
           "," + num(accuracy) + "," + config.hash() + "\n";
  }
  const fs::path out_dir(config.output);
  make_dirs(out_dir);
  write_file(out_dir / "effective_config.txt", config.source.to_text());
  write_file(out_dir / "probe.csv", csv);
  return results;
}

std::vector<TypicalityRow> cmd_typicality_report(const ExperimentConfig& config) {
  const PreparedData data = prepare_data(config);
  const auto& ds = data.dataset;
  const EncoderState state = config.checkpoint.empty()
                                 ? initial_encoder(data.encoder, ds.num_classes(), config.seeds.front())
                                 : load_checkpoint(config.checkpoint);
  if (state.num_classes != ds.num_classes() || state.config.vocab_size != data.encoder.vocab_size) {
    fail(ErrorKind::Configuration, "checkpoint does not match the dataset's label space or vocabulary");
  }
  const Tensor embeddings = embed_examples(state, data.train);
  std::vector<int> domains;
  std::vector<int> labels;
  for (const auto& ex : data.train) {
    domains.push_back(ex.domain);
    labels.push_back(ex.label);
  }
  const PrototypeSet protos =
      prototypes_from_embeddings(embeddings, domains, labels, ds.num_domains(), ds.num_classes(),
                                 config.train.prototypes_per_class, derive_seed(config.seeds.front(), "prototypes"));
  const TypicalityTable table =
      compute_typicality(data.train, embeddings, protos, config.train.alpha, config.train.multi_prototype_mode);

  std::map<std::int64_t, const Instance*> by_id;
  for (const auto& inst : ds.train) by_id[inst.id] = &inst;

  std::vector<TypicalityRow> rows;
  for (std::size_t k = 0; k < ds.num_domains(); ++k) {
    std::vector<std::pair<double, std::int64_t>> ranked;
    for (const auto& ex : data.train) {
      if (ex.domain == static_cast<int>(k)) ranked.emplace_back(table.at(ex.id).value, ex.id);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::size_t n = config.top_n;
    if (n > ranked.size()) {
      std::cerr << "warning: report.top_n " << n << " exceeds the " << ranked.size() << " instances of domain "
                << ds.domain_names[k] << "; clipped\n";
      n = ranked.size();
    }
    auto emit = [&](const char* extreme, std::size_t rank, std::int64_t id) {
      const Instance& inst = *by_id.at(id);
      std::string text = inst.text_a;
      if (!inst.text_b.empty()) text += " [SEP] " + inst.text_b;
      rows.push_back({ds.domain_names[k], extreme, rank, id, table.at(id), text});
    };
    for (std::size_t i = 0; i < n; ++i) emit("high", i + 1, ranked[i].second);
    for (std::size_t i = 0; i < n; ++i) emit("low", i + 1, ranked[ranked.size() - 1 - i].second);
  }

  std::string csv = "domain,extreme,rank,instance_id,typicality,raw,text,config_hash\n";
  for (const auto& r : rows) {
    csv += csv_field(r.domain) + "," + r.extreme + "," + std::to_string(r.rank) + "," +
           std::to_string(r.instance_id) + "," + num(r.score.value, 12) + "," + num(r.score.raw, 12) + "," +
           csv_field(r.text) + "," + config.hash() + "\n";
  }
  const fs::path out_dir(config.output);
  make_dirs(out_dir);
  write_file(out_dir / "effective_config.txt", config.source.to_text());
  write_file(out_dir / "typicality_report.csv", csv);
  return rows;
}

MultiDomainDataset cmd_synth_gen(const ExperimentConfig& config) {
  MultiDomainDataset ds = synth_generate(config.synth);
  make_dirs(config.output);
  write_corpus(config.output, ds);
  write_file(fs::path(config.output) / "effective_config.txt", config.source.to_text());
  write_file(fs::path(config.output) / "bayes_accuracy.txt", num(bayes_accuracy(config.synth), 10) + "\n");
  return ds;
}

}  // namespace mft
