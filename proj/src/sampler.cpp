#include "emc2/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "emc2/errors.hpp"

namespace emc2 {

namespace {

bool accept_proposal(double q, RandomStream& rng) {
  if (q >= 1.0) {
    rng.skip();
    return true;
  }
  return rng.next_double() < q;
}

}  // namespace

ChainTable init_chain_table(const Dataset& data, std::uint64_t seed) {
  data.validate();
  ChainTable chain;
  const int m = data.num_anchors();
  chain.states.resize(m);
  chain.iteration_touched.assign(m, 0);
  for (int k = 0; k < m; ++k) {
    RandomStream rng(seed, Lane::ChainInit, 0, static_cast<std::uint64_t>(k));
    const auto& negs = data.neg_lists[k];
    chain.states[k] = negs[rng.uniform_index(negs.size())];
  }
  return chain;
}

ChainTable init_base_chain_table(const Dataset& data, std::uint64_t seed,
                                 bool state_is_base) {
  data.validate();
  ChainTable chain;
  const int nb = data.num_bases();
  chain.states.resize(nb);
  chain.iteration_touched.assign(nb, 0);
  std::vector<int> first_anchor(nb, -1);
  for (int k = 0; k < data.num_anchors(); ++k) {
    const int b = data.items[data.anchors[k]].base_id;
    if (first_anchor[b] < 0) first_anchor[b] = k;
  }
  for (int b = 0; b < nb; ++b) {
    if (first_anchor[b] < 0) throw ConfigError("base without anchors");
    RandomStream rng(seed, Lane::ChainInit, 0, static_cast<std::uint64_t>(b));
    const auto& negs = data.neg_lists[first_anchor[b]];
    const int item_id = negs[rng.uniform_index(negs.size())];
    chain.states[b] = state_is_base ? data.items[item_id].base_id : item_id;
  }
  return chain;
}

double mh_accept_ratio(const Item& anchor, const Item& z_new, const Item& z_old,
                       const ParamVector& params, const EncoderSpec& spec,
                       const LossParams& loss) {
  loss.validate();
  const double s_new = similarity(anchor, z_new, params, spec);
  const double s_old = similarity(anchor, z_old, params, spec);
  const double q = std::exp(loss.beta * (s_new - s_old));
  if (!std::isfinite(q)) throw NumericError("mh_accept_ratio: non-finite ratio");
  return q;
}

int mh_step(int anchor_idx, ChainTable& chain, const ParamVector& params,
            const EncoderSpec& spec, const LossParams& loss, const Dataset& data,
            RandomStream& rng, const EncodedTable* table) {
  loss.validate();
  const auto& negs = data.neg_lists[anchor_idx];
  if (negs.empty()) throw ConfigError("mh_step: empty negative set");
  const int x = data.anchors[anchor_idx];
  const int z_old = chain.states[anchor_idx];

  const int z_new = negs[rng.uniform_index(negs.size())];
  double q;
  if (table != nullptr) {
    q = std::exp(loss.beta * (table->sim(x, z_new) - table->sim(x, z_old)));
    if (!std::isfinite(q)) throw NumericError("mh_step: non-finite ratio");
  } else {
    q = mh_accept_ratio(data.items[x], data.items[z_new], data.items[z_old], params,
                        spec, loss);
  }
  if (accept_proposal(q, rng)) chain.states[anchor_idx] = z_new;
  return chain.states[anchor_idx];
}

std::vector<int> run_chain_segment(int anchor_idx, ChainTable& chain,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss, const Dataset& data,
                                   int R, int P, RandomStream& rng,
                                   const EncodedTable* table) {
  if (P < 0 || P >= R) {
    throw ConfigError("run_chain_segment: requires 0 <= P < R, got P=" +
                      std::to_string(P) + " R=" + std::to_string(R));
  }
  std::vector<int> retained;
  retained.reserve(R - P);
  for (int r = 0; r < R; ++r) {
    const int state = mh_step(anchor_idx, chain, params, spec, loss, data, rng, table);
    if (r >= P) retained.push_back(state);
  }
  return retained;
}

InBatchSamples in_batch_mh(const std::vector<Item>& batch, const ParamVector& params,
                           const EncoderSpec& spec, const LossParams& loss,
                           ChainTable& base_chain, std::uint64_t seed,
                           long long iteration, int P, bool state_is_base,
                           const std::function<Item(int)>& resolve_state) {
  loss.validate();
  const int two_b = static_cast<int>(batch.size());
  if (two_b % 2 != 0 || two_b < 4) {
    throw ConfigError("in_batch_mh: need two views each of b >= 2 base items");
  }
  const int R = two_b - 2;
  if (P < 0 || P >= R) {
    throw ConfigError("in_batch_mh: requires 0 <= P < 2b-2, got P=" + std::to_string(P));
  }

  // Two views per base, numbered in batch order.
  std::map<int, int> views_seen;
  std::vector<int> view_slot(two_b);
  for (int j = 0; j < two_b; ++j) {
    if (batch[j].base_id < 0 || batch[j].base_id >= base_chain.size()) {
      throw ConfigError("in_batch_mh: base id outside chain table");
    }
    view_slot[j] = views_seen[batch[j].base_id]++;
    if (view_slot[j] > 1) {
      throw ConfigError("in_batch_mh: more than two views of base " +
                        std::to_string(batch[j].base_id));
    }
  }
  for (const auto& [base, count] : views_seen) {
    if (count != 2) {
      throw ConfigError("in_batch_mh: base " + std::to_string(base) +
                        " has a single view in the batch");
    }
  }

  // Features of batch items at the current theta.
  std::vector<Encoded> phi(two_b), psi(two_b);
  const bool unimodal = spec.modality == Modality::Unimodal;
  for (int j = 0; j < two_b; ++j) {
    phi[j] = encode_full(batch[j], params, Side::Phi, spec);
    psi[j] = unimodal ? phi[j] : encode_full(batch[j], params, Side::Psi, spec);
  }
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  InBatchSamples out;
  out.retained.resize(two_b);

  for (int j = 0; j < two_b; ++j) {
    const int base = batch[j].base_id;
    std::vector<int> eligible;
    eligible.reserve(R);
    for (int q = 0; q < two_b; ++q) {
      if (batch[q].base_id != base) eligible.push_back(q);
    }

    const std::uint64_t entity =
        2ull * static_cast<std::uint64_t>(base) + static_cast<std::uint64_t>(view_slot[j]);
    RandomStream rng(seed, Lane::ChainStep, static_cast<std::uint64_t>(iteration), entity);

    // Current state as a concrete item; -1 marks "tracking an in-batch view".
    int cur_batch_idx = -1;
    Item cur_item = resolve_state(base_chain.states[base]);
    Encoded cur_psi = unimodal ? encode_full(cur_item, params, Side::Phi, spec)
                               : encode_full(cur_item, params, Side::Psi, spec);

    auto& kept = out.retained[j];
    kept.reserve(R - P);
    for (int r = 0; r < R; ++r) {
      const int prop = eligible[rng.uniform_index(eligible.size())];
      const double s_new = dot(phi[j].feature, psi[prop].feature);
      const double s_old = cur_batch_idx >= 0
                               ? dot(phi[j].feature, psi[cur_batch_idx].feature)
                               : dot(phi[j].feature, cur_psi.feature);
      const double q = std::exp(loss.beta * (s_new - s_old));
      if (!std::isfinite(q)) throw NumericError("in_batch_mh: non-finite ratio");
      if (accept_proposal(q, rng)) {
        cur_batch_idx = prop;
        cur_item = batch[prop];
      }
      if (r >= P) kept.push_back(cur_item);
    }
    base_chain.states[base] = state_is_base ? cur_item.base_id : cur_item.id;
    base_chain.iteration_touched[base] = iteration;
  }
  return out;
}

}  // namespace emc2
