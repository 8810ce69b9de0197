#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/loss.hpp"
#include "emc2/rng.hpp"

namespace emc2 {

// One persistent Markov-chain state per entity (anchor in standalone mode,
// base item in in-batch mode). States are negative-item ids, or base ids when
// running with on-the-fly augmentations.
struct ChainTable {
  std::vector<int> states;
  std::vector<long long> iteration_touched;

  int size() const { return static_cast<int>(states.size()); }
};

// Uniform draw from each anchor's negative set, stream (ChainInit, 0, k, 0).
ChainTable init_chain_table(const Dataset& data, std::uint64_t seed);

// One chain per base item; state initialized from the base's first view
// (both views share the same negative set under all-but-self).
ChainTable init_base_chain_table(const Dataset& data, std::uint64_t seed,
                                 bool state_is_base);

// Q = exp(beta * (sim(x, z_new) - sim(x, z_old))), evaluated as the exp of a
// difference so the two partition-free factors never overflow separately.
double mh_accept_ratio(const Item& anchor, const Item& z_new, const Item& z_old,
                       const ParamVector& params, const EncoderSpec& spec,
                       const LossParams& loss);

// One Metropolis-Hastings step for anchor k: uniform proposal over the full
// negative set, accepted with probability min{1, Q}. Consumes exactly one
// index draw and one acceptance slot from rng (the acceptance draw is skipped
// but the counter still advances when Q >= 1). Returns the new state id.
// `table` optionally supplies precomputed features for the fixed theta.
int mh_step(int anchor_idx, ChainTable& chain, const ParamVector& params,
            const EncoderSpec& spec, const LossParams& loss, const Dataset& data,
            RandomStream& rng, const EncodedTable* table = nullptr);

// R sequential steps from the persisted state; retains states r >= P and
// writes the final state back. Returns the R - P retained item ids.
std::vector<int> run_chain_segment(int anchor_idx, ChainTable& chain,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss, const Dataset& data,
                                   int R, int P, RandomStream& rng,
                                   const EncodedTable* table = nullptr);

// In-batch variant: the 2b batch views act as anchors in batch order; anchor
// views of base j draw proposals uniformly from the 2b - 2 views of the other
// bases and run R = 2b - 2 steps each. The chain is keyed by base id and the
// two views of a base advance the same state sequentially. Stored states are
// dataset item ids, or base ids when `state_is_base` (on-the-fly
// augmentation); `resolve_state` turns a stored state into a concrete item.
struct InBatchSamples {
  // retained[j] aligns with batch[j]; each has length R - P.
  std::vector<std::vector<Item>> retained;
};

InBatchSamples in_batch_mh(const std::vector<Item>& batch, const ParamVector& params,
                           const EncoderSpec& spec, const LossParams& loss,
                           ChainTable& base_chain, std::uint64_t seed,
                           long long iteration, int P, bool state_is_base,
                           const std::function<Item(int)>& resolve_state);

}  // namespace emc2
