#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/loss.hpp"
#include "emc2/sampler.hpp"

namespace emc2 {

enum class Algorithm { Emc2, Simclr, ExactGd };
enum class OptimizerKind { Sgd, Adam };
enum class GammaSchedule { Constant, OneOverSqrtT };

struct TrainConfig {
  double beta = 1.0;
  int batch_size = 1;  // b base items per mini-batch (two views each); B anchors
                       // per iteration in standalone mode
  // R == 0 selects the in-batch sampler (R becomes 2b-2). R > 0 selects
  // standalone chains over the full negative sets with R steps per anchor.
  int R = 0;
  // P < 0 applies the default burn-in: R-1 standalone, min(b, R-1) in-batch.
  int P = -1;
  double gamma = 0.1;
  GammaSchedule schedule = GammaSchedule::Constant;
  long long total_iterations = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  Algorithm algorithm = Algorithm::Emc2;
  long long eval_every = 100;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  int effective_R(int b) const { return R > 0 ? R : 2 * b - 2; }
  int effective_P(int b) const;
  bool in_batch() const { return R == 0; }
  double step_size() const;  // gamma, or gamma / sqrt(T) under the 1/sqrt(T) schedule
};

// One anchor's contribution to the stochastic gradient (Eq.-style estimate):
// positive pair plus the retained negatives from its chain segment.
struct SampleEntry {
  Item anchor;
  Item positive;
  std::vector<Item> retained;
};
using MiniBatchSample = std::vector<SampleEntry>;

// -(beta/B) sum_k H(x_k, y_k) + (beta/(B(R-P))) sum_k sum_r H(x_k, Z_k^(r)).
ParamVector emc2_gradient_estimate(const MiniBatchSample& sample,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss);

// theta <- theta - gamma * estimate
void sgd_update(ParamVector& params, const ParamVector& estimate, double gamma);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

void adam_update(AdamState& state, ParamVector& params, const ParamVector& estimate,
                 double gamma, double beta1, double beta2, double eps);

// One optimizer step from the InfoNCE gradient with in-batch negatives
// (2b - 2 per anchor view). `adam` == nullptr runs plain SGD.
void simclr_step(ParamVector& params, const std::vector<Item>& batch,
                 const EncoderSpec& spec, const LossParams& loss, double gamma,
                 AdamState* adam = nullptr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

// theta <- theta - gamma * exact_grad(theta); full enumeration baseline.
void exact_gd_step(ParamVector& params, const EncoderSpec& spec, const LossParams& loss,
                   const Dataset& data, double gamma);

struct RunRow {
  long long iter = 0;
  long long samples_seen = 0;
  std::optional<double> loss;
  std::optional<double> grad_sq_norm;
  long long wall_ms = 0;
};

struct RunRecord {
  std::vector<RunRow> rows;
};

// Mutable state carried across checkpoint/resume boundaries.
struct TrainState {
  ParamVector params;
  ChainTable chains;
  AdamState adam;
  long long iteration = 0;
  long long samples_seen = 0;
};

struct TrainResult {
  RunRecord record;
  TrainState state;
  bool diverged = false;
  std::string message;
};

// Generates augmented views on the fly (infinite-augmentation datasets):
// (iteration_1based, base id, view slot) -> Item. Slots 0 and 1 are the two
// batch views; persisted chain states resolve through slot 0.
using ViewGenerator = std::function<Item(long long, int, int)>;

// Runs T iterations of the configured algorithm. Exact loss and squared
// gradient norm are recorded every eval_every iterations (and at the final
// iteration). Fully deterministic as a function of (config, data, spec).
TrainResult run_training(const TrainConfig& config, const Dataset& data,
                         const EncoderSpec& spec,
                         const ViewGenerator& views = nullptr);

// Same loop continuing from a checkpointed state. `stop_iteration` pauses the
// loop early (for checkpointing) without changing the schedule or the
// evaluation grid, which are tied to total_iterations.
TrainResult continue_training(const TrainConfig& config, const Dataset& data,
                              const EncoderSpec& spec, TrainState state,
                              const ViewGenerator& views = nullptr,
                              long long stop_iteration = -1);

// Fresh initial state for a configuration (parameters and chains). Chains are
// keyed per anchor in standalone mode and per base in in-batch mode; with
// infinite augmentations the stored states are base ids.
TrainState initial_train_state(const TrainConfig& config, const Dataset& data,
                               const EncoderSpec& spec, bool infinite_aug = false);

}  // namespace emc2
