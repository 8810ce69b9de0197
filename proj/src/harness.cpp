#include "emc2/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emc2/errors.hpp"
#include "emc2/rng.hpp"

namespace emc2::harness {

using json = nlohmann::ordered_json;

namespace {

constexpr double kNormFloor = 1e-12;

std::vector<double> normalized(std::vector<double> v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::max(std::sqrt(n2), kNormFloor);
  for (double& x : v) x *= inv;
  return v;
}

std::vector<double> gaussian_vector(RandomStream& rng, int dim, double sigma) {
  std::vector<double> v(dim);
  for (double& x : v) x = sigma * rng.next_normal();
  return v;
}

Item make_view(const DatasetSpec& spec,
               const std::vector<std::vector<double>>& bases, long long iteration,
               int base, int slot) {
  RandomStream rng(spec.seed, Lane::Augment, static_cast<std::uint64_t>(iteration),
                   static_cast<std::uint64_t>(base), static_cast<std::uint64_t>(slot));
  std::vector<double> f = bases[base];
  for (double& x : f) x += spec.noise_sigma * rng.next_normal();
  Item item;
  item.id = -1;
  item.base_id = base;
  item.features = normalized(std::move(f));
  return item;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

std::string hex_u64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex_u64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void DatasetSpec::validate() const {
  if (m < 2) throw ConfigError("dataset: m must be >= 2");
  if (clusters < 1) throw ConfigError("dataset: clusters must be >= 1");
  if (input_dim < 1) throw ConfigError("dataset: input_dim must be >= 1");
  if (noise_sigma < 0.0) throw ConfigError("dataset: noise_sigma must be >= 0");
  if (augmentations_per_item < 1 && !infinite()) {
    throw ConfigError("dataset: augmentations_per_item must be >= 1 or \"infinite\"");
  }
  if (mode != DatasetMode::SyntheticClusters && path.empty()) {
    throw ConfigError("dataset: csv modes need a path");
  }
  if (mode != DatasetMode::SyntheticClusters && infinite()) {
    throw ConfigError("dataset: infinite augmentations need the synthetic mode");
  }
}

SynthResult synth_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.mode != DatasetMode::SyntheticClusters) {
    throw ConfigError("synth_dataset: mode is not synthetic-clusters");
  }

  std::vector<std::vector<double>> centers(spec.clusters);
  for (int c = 0; c < spec.clusters; ++c) {
    RandomStream rng(spec.seed, Lane::Synth, 0, static_cast<std::uint64_t>(c));
    centers[c] = normalized(gaussian_vector(rng, spec.input_dim, 1.0));
  }

  SynthResult out;
  out.infinite = spec.infinite();
  out.base_features = std::make_shared<std::vector<std::vector<double>>>();
  out.base_features->reserve(spec.m);
  for (int b = 0; b < spec.m; ++b) {
    RandomStream rng(spec.seed, Lane::Synth, 1, static_cast<std::uint64_t>(b));
    std::vector<double> base = centers[b % spec.clusters];
    for (int j = 0; j < spec.input_dim; ++j) base[j] += spec.noise_sigma * rng.next_normal();
    out.base_features->push_back(std::move(base));
  }

  const int views = out.infinite ? 2 : spec.augmentations_per_item;
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(spec.m) * views);
  for (int b = 0; b < spec.m; ++b) {
    for (int v = 0; v < views; ++v) {
      Item it = make_view(spec, *out.base_features, 0, b, v);
      it.id = b * views + v;
      items.push_back(std::move(it));
    }
  }
  out.data = build_all_but_self(std::move(items));
  return out;
}

ViewGenerator make_view_generator(const DatasetSpec& spec,
                                  std::shared_ptr<std::vector<std::vector<double>>> bases) {
  return [spec, bases](long long iteration, int base, int slot) {
    return make_view(spec, *bases, iteration, base, slot);
  };
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "id" || header[1] != "base_id") {
    throw ParseError(path + ":1: header must start with id,base_id,f0,...");
  }
  const int dim = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < dim; ++j) {
    if (header[2 + j] != "f" + std::to_string(j)) {
      throw ParseError(path + ":1: feature columns must be named f0..f" +
                       std::to_string(dim - 1));
    }
  }

  std::vector<Item> items;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    }
    auto parse_num = [&](const std::string& s, const char* what) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric " +
                         what + " '" + s + "'");
      }
      return v;
    };
    Item it;
    const double idv = parse_num(cells[0], "id");
    const double basev = parse_num(cells[1], "base_id");
    it.id = static_cast<int>(idv);
    it.base_id = static_cast<int>(basev);
    if (idv != it.id || basev != it.base_id) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": id columns must be integers");
    }
    const int expected = static_cast<int>(items.size());
    if (it.id != expected) {
      if (it.id >= 0 && it.id < expected) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate id " +
                         std::to_string(it.id));
      }
      throw ParseError(path + ":" + std::to_string(line_no) + ": ids must be 0..n-1 " +
                       "in file order (expected " + std::to_string(expected) + ")");
    }
    it.features.reserve(dim);
    for (int j = 0; j < dim; ++j) {
      it.features.push_back(parse_num(cells[2 + j], "feature"));
    }
    items.push_back(std::move(it));
  }
  if (items.empty()) throw ParseError(path + ": no data rows");
  return build_all_but_self(std::move(items));
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset file '" + path + "'");
  const int dim = static_cast<int>(data.items.front().features.size());
  out << "id,base_id";
  for (int j = 0; j < dim; ++j) out << ",f" << j;
  out << "\n";
  for (const auto& it : data.items) {
    out << it.id << "," << it.base_id;
    for (double f : it.features) out << "," << format_double(f);
    out << "\n";
  }
}

namespace {

EncoderSpec parse_encoder(const json& j) {
  reject_unknown_keys(j, {"kind", "modality", "input_dim", "feature_dim", "hidden_dim",
                          "normalize", "norm_bound"},
                      "encoder");
  EncoderSpec spec;
  const std::string kind = j.value("kind", "embedding-table");
  if (kind == "embedding-table") spec.kind = EncoderKind::EmbeddingTable;
  else if (kind == "linear") spec.kind = EncoderKind::Linear;
  else if (kind == "mlp2") spec.kind = EncoderKind::Mlp2;
  else throw ConfigError("config: unknown encoder kind '" + kind + "'");
  const std::string modality = j.value("modality", "unimodal");
  if (modality == "unimodal") spec.modality = Modality::Unimodal;
  else if (modality == "bimodal") spec.modality = Modality::Bimodal;
  else throw ConfigError("config: unknown modality '" + modality + "'");
  spec.input_dim = j.value("input_dim", 0);
  spec.feature_dim = j.value("feature_dim", 8);
  spec.hidden_dim = j.value("hidden_dim", 0);
  spec.normalize = j.value("normalize", true);
  spec.norm_bound = j.value("norm_bound", 1.0);
  return spec;
}

DatasetSpec parse_dataset(const json& j) {
  reject_unknown_keys(j, {"mode", "m", "clusters", "input_dim", "noise_sigma",
                          "augmentations_per_item", "seed", "path"},
                      "dataset");
  DatasetSpec spec;
  const std::string mode = j.value("mode", "synthetic-clusters");
  if (mode == "synthetic-clusters") spec.mode = DatasetMode::SyntheticClusters;
  else if (mode == "csv-features") spec.mode = DatasetMode::CsvFeatures;
  else if (mode == "precomputed-augmentations") {
    spec.mode = DatasetMode::PrecomputedAugmentations;
  } else {
    throw ConfigError("config: unknown dataset mode '" + mode + "'");
  }
  spec.m = j.value("m", 2);
  spec.clusters = j.value("clusters", 1);
  spec.input_dim = j.value("input_dim", 2);
  spec.noise_sigma = j.value("noise_sigma", 0.0);
  if (j.contains("augmentations_per_item")) {
    const auto& a = j.at("augmentations_per_item");
    if (a.is_string()) {
      if (a.get<std::string>() != "infinite") {
        throw ConfigError("config: augmentations_per_item must be an integer or \"infinite\"");
      }
      spec.augmentations_per_item = kInfiniteAugmentations;
    } else {
      spec.augmentations_per_item = a.get<int>();
    }
  }
  spec.seed = j.value("seed", 0ull);
  spec.path = j.value("path", std::string{});
  return spec;
}

TrainConfig parse_train(const json& j) {
  reject_unknown_keys(j, {"beta", "batch_size", "R", "P", "gamma", "total_iterations",
                          "optimizer", "algorithm", "eval_every", "seed"},
                      "train");
  TrainConfig tc;
  tc.beta = j.value("beta", 1.0);
  tc.batch_size = j.value("batch_size", 1);
  tc.R = j.value("R", 0);
  tc.P = j.value("P", -1);
  if (j.contains("gamma")) {
    const auto& g = j.at("gamma");
    if (g.is_number()) {
      tc.gamma = g.get<double>();
      tc.schedule = GammaSchedule::Constant;
    } else {
      reject_unknown_keys(g, {"base", "schedule"}, "train.gamma");
      tc.gamma = g.value("base", 1.0);
      const std::string sched = g.value("schedule", "constant");
      if (sched == "constant") tc.schedule = GammaSchedule::Constant;
      else if (sched == "one-over-sqrt-T") tc.schedule = GammaSchedule::OneOverSqrtT;
      else throw ConfigError("config: unknown gamma schedule '" + sched + "'");
    }
  }
  tc.total_iterations = j.value("total_iterations", 0ll);
  const std::string opt = j.value("optimizer", "sgd");
  if (opt == "sgd") tc.optimizer = OptimizerKind::Sgd;
  else if (opt == "adam") tc.optimizer = OptimizerKind::Adam;
  else throw ConfigError("config: unknown optimizer '" + opt + "'");
  const std::string algo = j.value("algorithm", "emc2");
  if (algo == "emc2") tc.algorithm = Algorithm::Emc2;
  else if (algo == "simclr") tc.algorithm = Algorithm::Simclr;
  else if (algo == "exact-gd") tc.algorithm = Algorithm::ExactGd;
  else throw ConfigError("config: unknown algorithm '" + algo + "'");
  tc.eval_every = j.value("eval_every", 100ll);
  tc.seed = j.value("seed", 0ull);
  return tc;
}

const char* mode_name(DatasetMode m) {
  switch (m) {
    case DatasetMode::SyntheticClusters: return "synthetic-clusters";
    case DatasetMode::CsvFeatures: return "csv-features";
    case DatasetMode::PrecomputedAugmentations: return "precomputed-augmentations";
  }
  return "?";
}

const char* kind_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::EmbeddingTable: return "embedding-table";
    case EncoderKind::Linear: return "linear";
    case EncoderKind::Mlp2: return "mlp2";
  }
  return "?";
}

}  // namespace

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Emc2: return "emc2";
    case Algorithm::Simclr: return "simclr";
    case Algorithm::ExactGd: return "exact-gd";
  }
  return "?";
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"dataset", "encoder", "train", "output_dir", "checkpoint_every"},
                      "top level");
  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"));
  if (j.contains("encoder")) cfg.encoder = parse_encoder(j.at("encoder"));
  if (j.contains("train")) cfg.train = parse_train(j.at("train"));
  cfg.output_dir = j.value("output_dir", "out");
  cfg.checkpoint_every = j.value("checkpoint_every", 0ll);
  if (cfg.checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be >= 0");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

namespace {
json config_to_json(const ExperimentConfig& config);
}

std::string serialize_config(const ExperimentConfig& config) {
  return config_to_json(config).dump();
}

// Hash of the semantic sections only; the output directory and checkpoint
// cadence do not affect the trajectory a checkpoint belongs to.
std::uint64_t config_hash(const ExperimentConfig& config) {
  json j = config_to_json(config);
  j.erase("output_dir");
  j.erase("checkpoint_every");
  return fnv1a64(j.dump());
}

namespace {
json config_to_json(const ExperimentConfig& config) {
  json j;
  j["dataset"] = {{"mode", mode_name(config.dataset.mode)},
                  {"m", config.dataset.m},
                  {"clusters", config.dataset.clusters},
                  {"input_dim", config.dataset.input_dim},
                  {"noise_sigma", config.dataset.noise_sigma},
                  {"augmentations_per_item",
                   config.dataset.infinite()
                       ? json("infinite")
                       : json(config.dataset.augmentations_per_item)},
                  {"seed", config.dataset.seed},
                  {"path", config.dataset.path}};
  j["encoder"] = {{"kind", kind_name(config.encoder.kind)},
                  {"modality",
                   config.encoder.modality == Modality::Unimodal ? "unimodal" : "bimodal"},
                  {"input_dim", config.encoder.input_dim},
                  {"feature_dim", config.encoder.feature_dim},
                  {"hidden_dim", config.encoder.hidden_dim},
                  {"normalize", config.encoder.normalize},
                  {"norm_bound", config.encoder.norm_bound}};
  j["train"] = {{"beta", config.train.beta},
                {"batch_size", config.train.batch_size},
                {"R", config.train.R},
                {"P", config.train.P},
                {"gamma",
                 {{"base", config.train.gamma},
                  {"schedule", config.train.schedule == GammaSchedule::Constant
                                   ? "constant"
                                   : "one-over-sqrt-T"}}},
                {"total_iterations", config.train.total_iterations},
                {"optimizer",
                 config.train.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
                {"algorithm", algorithm_name(config.train.algorithm)},
                {"eval_every", config.train.eval_every},
                {"seed", config.train.seed}};
  j["output_dir"] = config.output_dir;
  j["checkpoint_every"] = config.checkpoint_every;
  return j;
}
}  // namespace

ExperimentConfig fig7_analog_config() {
  ExperimentConfig cfg;
  cfg.dataset.mode = DatasetMode::SyntheticClusters;
  cfg.dataset.m = 100;
  cfg.dataset.clusters = 10;
  cfg.dataset.input_dim = 8;
  cfg.dataset.noise_sigma = 0.1;
  cfg.dataset.augmentations_per_item = 2;
  cfg.dataset.seed = 20240517;

  cfg.encoder.kind = EncoderKind::EmbeddingTable;
  cfg.encoder.modality = Modality::Unimodal;
  cfg.encoder.feature_dim = 8;
  cfg.encoder.normalize = true;
  cfg.encoder.norm_bound = 1.0;

  cfg.train.beta = kBetaPresetSmall;
  cfg.train.batch_size = 4;
  cfg.train.R = 0;   // in-batch sampling, R = 2b - 2
  cfg.train.P = -1;  // default burn-in P = b
  cfg.train.gamma = 0.1;
  cfg.train.schedule = GammaSchedule::Constant;
  // 200 epochs: one epoch is a full pass over the 2m views, i.e. m/b
  // iterations at batch size b.
  cfg.train.total_iterations = 200 * (100 / 4);
  cfg.train.optimizer = OptimizerKind::Sgd;
  cfg.train.algorithm = Algorithm::Emc2;
  cfg.train.eval_every = 250;
  cfg.train.seed = 1;

  cfg.output_dir = "out";
  cfg.checkpoint_every = 0;
  return cfg;
}

void save_checkpoint(const std::string& path, const Checkpoint& state) {
  json j;
  j["version"] = state.version;
  j["iteration"] = state.iteration;
  j["samples_seen"] = state.samples_seen;
  j["encoder"] = {{"kind", kind_name(state.encoder.kind)},
                  {"modality",
                   state.encoder.modality == Modality::Unimodal ? "unimodal" : "bimodal"},
                  {"input_dim", state.encoder.input_dim},
                  {"feature_dim", state.encoder.feature_dim},
                  {"hidden_dim", state.encoder.hidden_dim},
                  {"normalize", state.encoder.normalize},
                  {"norm_bound", state.encoder.norm_bound},
                  {"item_count", state.encoder.item_count}};
  j["theta"] = state.theta;
  j["chain_states"] = state.chain_states;
  j["adam"] = {{"m", state.adam.m}, {"v", state.adam.v}, {"t", state.adam.t}};
  j["seed"] = state.seed;
  j["config_hash"] = hex_u64(state.config_hash);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw LoadError("checkpoint '" + path + "' is corrupted: " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.version = j.at("version").get<int>();
    if (ckpt.version != 1) {
      throw LoadError("checkpoint version " + std::to_string(ckpt.version) +
                      " is not supported");
    }
    ckpt.iteration = j.at("iteration").get<long long>();
    ckpt.samples_seen = j.at("samples_seen").get<long long>();
    const auto& e = j.at("encoder");
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "embedding-table") ckpt.encoder.kind = EncoderKind::EmbeddingTable;
    else if (kind == "linear") ckpt.encoder.kind = EncoderKind::Linear;
    else if (kind == "mlp2") ckpt.encoder.kind = EncoderKind::Mlp2;
    else throw LoadError("checkpoint: unknown encoder kind");
    ckpt.encoder.modality = e.at("modality").get<std::string>() == "unimodal"
                                ? Modality::Unimodal
                                : Modality::Bimodal;
    ckpt.encoder.input_dim = e.at("input_dim").get<int>();
    ckpt.encoder.feature_dim = e.at("feature_dim").get<int>();
    ckpt.encoder.hidden_dim = e.at("hidden_dim").get<int>();
    ckpt.encoder.normalize = e.at("normalize").get<bool>();
    ckpt.encoder.norm_bound = e.at("norm_bound").get<double>();
    ckpt.encoder.item_count = e.at("item_count").get<int>();
    ckpt.theta = j.at("theta").get<std::vector<double>>();
    ckpt.chain_states = j.at("chain_states").get<std::vector<int>>();
    ckpt.adam.m = j.at("adam").at("m").get<std::vector<double>>();
    ckpt.adam.v = j.at("adam").at("v").get<std::vector<double>>();
    ckpt.adam.t = j.at("adam").at("t").get<long long>();
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.config_hash = parse_hex_u64(j.at("config_hash").get<std::string>());
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError("checkpoint '" + path + "' is malformed: " + e.what());
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ExperimentConfig& config, const EncoderSpec& resolved,
                           const TrainState& state) {
  Checkpoint ckpt;
  ckpt.iteration = state.iteration;
  ckpt.samples_seen = state.samples_seen;
  ckpt.encoder = resolved;
  ckpt.theta = state.params.values();
  ckpt.chain_states = state.chains.states;
  ckpt.adam = state.adam;
  ckpt.seed = config.train.seed;
  ckpt.config_hash = config_hash(config);
  return ckpt;
}

TrainState restore_train_state(const Checkpoint& ckpt, const ExperimentConfig& config) {
  if (ckpt.config_hash != config_hash(config)) {
    throw LoadError("checkpoint config hash does not match the supplied config");
  }
  TrainState state;
  auto layout = param_layout(ckpt.encoder);
  std::size_t total = 0;
  for (const auto& b : layout) total += b.length;
  if (ckpt.theta.size() != total) {
    throw LoadError("checkpoint theta length does not match the encoder layout");
  }
  state.params = ParamVector(ckpt.theta, layout);
  state.chains.states = ckpt.chain_states;
  state.chains.iteration_touched.assign(ckpt.chain_states.size(), ckpt.iteration);
  state.adam = ckpt.adam;
  state.iteration = ckpt.iteration;
  state.samples_seen = ckpt.samples_seen;
  return state;
}

}  // namespace emc2::harness
