#pragma once

#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/encoder.hpp"
#include "emc2/param_vector.hpp"

namespace emc2 {

struct LossParams {
  double beta = 1.0;  // inverse temperature, > 0
  void validate() const;
};

// Eagerly encoded features for every dataset item at one theta. For unimodal
// encoders the phi/psi tables alias the same storage.
class EncodedTable {
 public:
  EncodedTable(const Dataset& data, const ParamVector& params, const EncoderSpec& spec);

  const Encoded& phi(int item_id) const { return phi_[item_id]; }
  const Encoded& psi(int item_id) const { return unimodal_ ? phi_[item_id] : psi_[item_id]; }
  double sim(int x_id, int y_id) const;

 private:
  bool unimodal_;
  std::vector<Encoded> phi_;
  std::vector<Encoded> psi_;
};

// Exact softmax distribution over anchor k's negative set (stable
// log-sum-exp), indexed consistently with neg_lists[k].
std::vector<double> softmax_neg_dist(const Dataset& data, int anchor_idx,
                                     const ParamVector& params, const EncoderSpec& spec,
                                     const LossParams& loss);
std::vector<double> softmax_neg_dist(const Dataset& data, int anchor_idx,
                                     const EncodedTable& table, const LossParams& loss);

double log_partition(const Dataset& data, int anchor_idx, const ParamVector& params,
                     const EncoderSpec& spec, const LossParams& loss);

// Average over all stored positive pairs of
//   -beta * sim(x, y) + logsumexp_z beta * sim(x, z).
// The default entry points run the anchor loop with OpenMP when available;
// per-anchor terms are reduced in index order so results are bitwise
// deterministic and independent of thread count. serial:: holds the plain
// single-pass reference used by tests and the benchmark.
double global_loss(const Dataset& data, const ParamVector& params,
                   const EncoderSpec& spec, const LossParams& loss);
ParamVector exact_grad(const Dataset& data, const ParamVector& params,
                       const EncoderSpec& spec, const LossParams& loss);

namespace serial {
double global_loss(const Dataset& data, const ParamVector& params,
                   const EncoderSpec& spec, const LossParams& loss);
ParamVector exact_grad(const Dataset& data, const ParamVector& params,
                       const EncoderSpec& spec, const LossParams& loss);
}  // namespace serial

// Batch-limited loss over caller-supplied negative lists.
struct PosPair {
  Item anchor;
  Item positive;
};

double infonce_loss(const std::vector<PosPair>& batch,
                    const std::vector<std::vector<Item>>& neg_batches,
                    const ParamVector& params, const EncoderSpec& spec,
                    const LossParams& loss);

ParamVector infonce_grad(const std::vector<PosPair>& batch,
                         const std::vector<std::vector<Item>>& neg_batches,
                         const ParamVector& params, const EncoderSpec& spec,
                         const LossParams& loss);

// Stable log(sum(exp(v))) with max subtraction.
double log_sum_exp(const std::vector<double>& v);

}  // namespace emc2
