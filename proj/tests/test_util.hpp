#pragma once

// Shared fixtures: small seeded instances for each encoder kind, built
// directly on top of the dataset module so the low-level tests do not depend
// on the harness.

#include <cmath>
#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/encoder.hpp"
#include "emc2/loss.hpp"
#include "emc2/rng.hpp"

namespace emc2::testutil {

struct Instance {
  Dataset data;
  EncoderSpec spec;
  ParamVector params;
  LossParams loss;
};

inline std::vector<double> random_unit(RandomStream& rng, int dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.next_normal();
    n2 += x * x;
  }
  const double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
  for (auto& x : v) x *= inv;
  return v;
}

inline std::vector<Item> make_items(int bases, int views, int dim, std::uint64_t seed) {
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(bases) * views);
  for (int b = 0; b < bases; ++b) {
    RandomStream rng(seed, Lane::Synth, 7, static_cast<std::uint64_t>(b));
    for (int v = 0; v < views; ++v) {
      Item it;
      it.id = b * views + v;
      it.base_id = b;
      it.features = random_unit(rng, dim);
      items.push_back(std::move(it));
    }
  }
  return items;
}

inline Instance table_instance(int bases, int views, int d, double beta,
                               std::uint64_t seed, bool normalize = true) {
  Instance inst;
  inst.data = build_all_but_self(make_items(bases, views, d, seed));
  inst.spec.kind = EncoderKind::EmbeddingTable;
  inst.spec.modality = Modality::Unimodal;
  inst.spec.feature_dim = d;
  inst.spec.normalize = normalize;
  inst.spec.item_count = static_cast<int>(inst.data.items.size());
  inst.params = init_params(inst.spec, seed);
  inst.loss.beta = beta;
  return inst;
}

inline Instance linear_instance(int bases, int views, int input_dim, int d, double beta,
                                std::uint64_t seed, bool bimodal = false) {
  Instance inst;
  inst.data = build_all_but_self(make_items(bases, views, input_dim, seed));
  inst.spec.kind = EncoderKind::Linear;
  inst.spec.modality = bimodal ? Modality::Bimodal : Modality::Unimodal;
  inst.spec.input_dim = input_dim;
  inst.spec.feature_dim = d;
  inst.spec.normalize = true;
  inst.params = init_params(inst.spec, seed);
  inst.loss.beta = beta;
  return inst;
}

inline Instance mlp2_instance(int bases, int views, int input_dim, int hidden, int d,
                              double beta, std::uint64_t seed, bool bimodal = false) {
  Instance inst;
  inst.data = build_all_but_self(make_items(bases, views, input_dim, seed));
  inst.spec.kind = EncoderKind::Mlp2;
  inst.spec.modality = bimodal ? Modality::Bimodal : Modality::Unimodal;
  inst.spec.input_dim = input_dim;
  inst.spec.hidden_dim = hidden;
  inst.spec.feature_dim = d;
  inst.spec.normalize = true;
  inst.params = init_params(inst.spec, seed);
  inst.loss.beta = beta;
  return inst;
}

// Max-norm relative disagreement between two parameter vectors.
inline double rel_error(const ParamVector& a, const ParamVector& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1e-12);
}

}  // namespace emc2::testutil
