#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/optimizer.hpp"

namespace emc2::harness {

inline constexpr double kBetaPresetSmall = 5.0;
inline constexpr double kBetaPresetLarge = 14.28;
inline constexpr int kInfiniteAugmentations = -1;

enum class DatasetMode { SyntheticClusters, CsvFeatures, PrecomputedAugmentations };

struct DatasetSpec {
  DatasetMode mode = DatasetMode::SyntheticClusters;
  int m = 2;           // base items
  int clusters = 1;
  int input_dim = 2;
  double noise_sigma = 0.0;
  int augmentations_per_item = 2;  // kInfiniteAugmentations = fresh views per iteration
  std::uint64_t seed = 0;
  std::string path;  // csv modes

  bool infinite() const { return augmentations_per_item == kInfiniteAugmentations; }
  void validate() const;
};

struct SynthResult {
  Dataset data;  // infinite mode: a frozen 2-view reference sample per base
  std::shared_ptr<std::vector<std::vector<double>>> base_features;
  bool infinite = false;
};

// Cluster centers uniform on the sphere; base = center + gaussian noise;
// augmented view = base + gaussian(noise_sigma), renormalized. Positive pairs
// chain the views of a base; negatives are every view of the other bases.
SynthResult synth_dataset(const DatasetSpec& spec);

// (iteration, base, view slot) -> freshly augmented Item, stream-addressed so
// regeneration is reproducible. Slot 0 doubles as the resolution of persisted
// chain states.
ViewGenerator make_view_generator(const DatasetSpec& spec,
                                  std::shared_ptr<std::vector<std::vector<double>>> bases);

// CSV with header id,base_id,f0..f{k-1}; ids must be 0..n-1 in file order.
Dataset load_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& data, const std::string& path);

struct ExperimentConfig {
  DatasetSpec dataset;
  EncoderSpec encoder;
  TrainConfig train;
  std::string output_dir = "out";
  long long checkpoint_every = 0;  // 0 = final checkpoint only
};

// Strict JSON mirror of ExperimentConfig; unknown keys are a hard error.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);  // canonical form
std::uint64_t config_hash(const ExperimentConfig& config);

// Desk-scale analog of the exactly-evaluable trajectory experiment:
// 100 base items, 2 precomputed views, embedding-table d = 8, normalized,
// beta = 5, SGD with b = 4, in-batch sampling.
ExperimentConfig fig7_analog_config();

struct Checkpoint {
  int version = 1;
  long long iteration = 0;
  long long samples_seen = 0;
  EncoderSpec encoder;
  std::vector<double> theta;
  std::vector<int> chain_states;
  AdamState adam;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& state);
Checkpoint load_checkpoint(const std::string& path);

// `resolved` is the encoder spec with derived fields (item_count) filled in.
Checkpoint make_checkpoint(const ExperimentConfig& config, const EncoderSpec& resolved,
                           const TrainState& state);
TrainState restore_train_state(const Checkpoint& ckpt, const ExperimentConfig& config);

const char* algorithm_name(Algorithm a);

struct ExperimentResult {
  int exit_status = 0;
  RunRecord record;
  TrainState state;
  bool diverged = false;
  std::string message;
  std::string run_log_path;
  std::string summary_path;
  std::string checkpoint_path;
};

// Builds the dataset, trains, and writes run.jsonl / summary.json /
// checkpoint.json under output_dir. `resume_from` continues a prior
// checkpoint (config hashes must match).
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& resume_from = "");

// Merges run logs into a tidy CSV: algorithm, iteration, samples_seen, loss,
// grad_sq_norm, wall_ms. The algorithm label is read from the summary.json
// beside each log, falling back to the file stem.
void emit_report(const std::vector<std::string>& run_files, const std::string& out_csv);

// Run-log serialization (JSON lines with keys iter, samples_seen, loss,
// grad_sq_norm, wall_ms).
void write_run_log(const RunRecord& record, const std::string& path);
RunRecord read_run_log(const std::string& path);

std::string format_double(double v);  // %.17g, round-trip exact

}  // namespace emc2::harness
