#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emc2/errors.hpp"
#include "emc2/harness.hpp"

namespace emc2::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct BuiltDataset {
  Dataset data;
  ViewGenerator views;  // null for precomputed views
};

BuiltDataset build_dataset(const ExperimentConfig& config) {
  const auto& ds = config.dataset;
  ds.validate();
  BuiltDataset out;
  if (ds.mode == DatasetMode::SyntheticClusters) {
    SynthResult synth = synth_dataset(ds);
    out.data = std::move(synth.data);
    if (synth.infinite) out.views = make_view_generator(ds, synth.base_features);
    return out;
  }
  out.data = load_dataset_csv(ds.path);
  if (ds.mode == DatasetMode::PrecomputedAugmentations &&
      out.data.base_views.front().size() < 2) {
    throw ConfigError("precomputed-augmentations mode needs >= 2 views per base");
  }
  return out;
}

EncoderSpec resolve_encoder(const ExperimentConfig& config, const Dataset& data,
                            bool infinite) {
  EncoderSpec spec = config.encoder;
  if (spec.kind == EncoderKind::EmbeddingTable) {
    if (infinite) {
      throw ConfigError("embedding-table encoders cannot run with infinite augmentations");
    }
    spec.item_count = static_cast<int>(data.items.size());
  } else {
    const int dim = static_cast<int>(data.items.front().features.size());
    if (spec.input_dim == 0) spec.input_dim = dim;
    if (spec.input_dim != dim) {
      throw ConfigError("encoder input_dim " + std::to_string(spec.input_dim) +
                        " does not match dataset feature dimension " +
                        std::to_string(dim));
    }
  }
  spec.validate();
  return spec;
}

void append_rows(RunRecord& into, const RunRecord& from) {
  into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
}

json summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
  json j;
  j["algorithm"] = algorithm_name(config.train.algorithm);
  j["iterations"] = result.state.iteration;
  j["samples_seen"] = result.state.samples_seen;
  const RunRow* last = nullptr;
  for (const auto& row : result.record.rows) {
    if (row.loss.has_value()) last = &row;
  }
  j["final_loss"] = last ? json(*last->loss) : json(nullptr);
  j["final_grad_sq_norm"] =
      last && last->grad_sq_norm.has_value() ? json(*last->grad_sq_norm) : json(nullptr);
  long long wall = 0;
  for (const auto& row : result.record.rows) wall = std::max(wall, row.wall_ms);
  j["wall_ms"] = wall;
  j["diverged"] = result.diverged;
  j["message"] = result.message;
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  j["config_hash"] = std::string(buf);
  return j;
}

}  // namespace

void write_run_log(const RunRecord& record, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write run log '" + path + "'");
  for (const auto& row : record.rows) {
    out << "{\"iter\":" << row.iter << ",\"samples_seen\":" << row.samples_seen;
    if (row.loss.has_value()) out << ",\"loss\":" << format_double(*row.loss);
    if (row.grad_sq_norm.has_value()) {
      out << ",\"grad_sq_norm\":" << format_double(*row.grad_sq_norm);
    }
    out << ",\"wall_ms\":" << row.wall_ms << "}\n";
  }
}

RunRecord read_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open run log '" + path + "'");
  RunRecord record;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("iter") || !j.contains("samples_seen") || !j.contains("wall_ms")) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": missing iter/samples_seen/wall_ms");
    }
    RunRow row;
    row.iter = j.at("iter").get<long long>();
    row.samples_seen = j.at("samples_seen").get<long long>();
    if (j.contains("loss")) row.loss = j.at("loss").get<double>();
    if (j.contains("grad_sq_norm")) row.grad_sq_norm = j.at("grad_sq_norm").get<double>();
    row.wall_ms = j.at("wall_ms").get<long long>();
    record.rows.push_back(row);
  }
  return record;
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& resume_from) {
  config.train.validate();
  BuiltDataset built = build_dataset(config);
  const EncoderSpec spec = resolve_encoder(config, built.data, built.views != nullptr);

  fs::create_directories(config.output_dir);
  ExperimentResult result;
  result.run_log_path = (fs::path(config.output_dir) / "run.jsonl").string();
  result.summary_path = (fs::path(config.output_dir) / "summary.json").string();
  result.checkpoint_path = (fs::path(config.output_dir) / "checkpoint.json").string();

  TrainState state;
  if (!resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_from);
    state = restore_train_state(ckpt, config);
  } else {
    state = initial_train_state(config.train, built.data, spec, built.views != nullptr);
  }

  const long long T = config.train.total_iterations;
  const long long every = config.checkpoint_every;
  while (true) {
    long long stop = T;
    if (every > 0 && state.iteration < T) {
      stop = std::min(T, (state.iteration / every + 1) * every);
    }
    TrainResult part = continue_training(config.train, built.data, spec,
                                         std::move(state), built.views, stop);
    append_rows(result.record, part.record);
    state = std::move(part.state);
    if (part.diverged) {
      result.diverged = true;
      result.message = part.message;
      if (state.params.all_finite()) {
        save_checkpoint(result.checkpoint_path, make_checkpoint(config, spec, state));
      }
      break;
    }
    const Checkpoint ckpt = make_checkpoint(config, spec, state);
    save_checkpoint(result.checkpoint_path, ckpt);
    if (every > 0 && state.iteration < T) {
      char stamp[32];
      std::snprintf(stamp, sizeof(stamp), "checkpoint_%06lld.json",
                    static_cast<long long>(state.iteration));
      save_checkpoint((fs::path(config.output_dir) / stamp).string(), ckpt);
    }
    if (state.iteration >= T) break;
  }

  result.state = std::move(state);
  if (result.diverged) {
    // Keep the last finite checkpoint on disk; report the failure.
    result.exit_status = 3;
  }

  // T = 0 runs still report the initialization metrics.
  if (result.record.rows.empty() && !result.diverged) {
    const LossParams loss{config.train.beta};
    RunRow row;
    row.iter = result.state.iteration;
    row.samples_seen = result.state.samples_seen;
    row.loss = global_loss(built.data, result.state.params, spec, loss);
    row.grad_sq_norm =
        exact_grad(built.data, result.state.params, spec, loss).squared_norm();
    row.wall_ms = 0;
    result.record.rows.push_back(row);
  }

  write_run_log(result.record, result.run_log_path);
  {
    std::ofstream out(result.summary_path);
    if (!out) throw ConfigError("cannot write summary '" + result.summary_path + "'");
    out << summary_json(config, result).dump(2) << "\n";
  }
  return result;
}

void emit_report(const std::vector<std::string>& run_files, const std::string& out_csv) {
  std::ofstream out(out_csv);
  if (!out) throw ConfigError("cannot write report '" + out_csv + "'");
  out << "algorithm,iteration,samples_seen,loss,grad_sq_norm,wall_ms\n";
  for (const auto& file : run_files) {
    const RunRecord record = read_run_log(file);
    std::string label = fs::path(file).stem().string();
    const fs::path summary = fs::path(file).parent_path() / "summary.json";
    if (fs::exists(summary)) {
      std::ifstream in(summary);
      try {
        json j;
        in >> j;
        if (j.contains("algorithm")) label = j.at("algorithm").get<std::string>();
      } catch (const std::exception&) {
        // fall back to the file stem
      }
    }
    for (const auto& row : record.rows) {
      out << label << "," << row.iter << "," << row.samples_seen << ",";
      if (row.loss.has_value()) out << format_double(*row.loss);
      out << ",";
      if (row.grad_sq_norm.has_value()) out << format_double(*row.grad_sq_norm);
      out << "," << row.wall_ms << "\n";
    }
  }
}

}  // namespace emc2::harness
