#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emc2/item.hpp"
#include "emc2/param_vector.hpp"

namespace emc2 {

enum class EncoderKind { EmbeddingTable, Linear, Mlp2 };
enum class Modality { Unimodal, Bimodal };
enum class Side { Phi, Psi };

// Small differentiable encoders phi, psi: X -> R^d. Unimodal encoders share
// one parameter block; bimodal encoders keep disjoint "phi"/"psi" blocks.
// With `normalize` set, outputs are projected to the unit sphere with a safe
// floor on the denominator (see normalized_feature), giving norm bound c = 1.
struct EncoderSpec {
  EncoderKind kind = EncoderKind::EmbeddingTable;
  Modality modality = Modality::Unimodal;
  int input_dim = 0;    // linear / mlp2 payload dimension
  int feature_dim = 0;  // d
  int hidden_dim = 0;   // mlp2 only
  bool normalize = true;
  double norm_bound = 1.0;  // c
  int item_count = 0;       // embedding-table rows

  void validate() const;
  // Parameters of one side's network (table, or weight/bias stack).
  std::size_t side_param_count() const;
  std::string block_name(Side side) const;
};

// Layout with one block per side ("enc" unimodal, "phi"/"psi" bimodal).
std::vector<ParamBlock> param_layout(const EncoderSpec& spec);

// Deterministic initialization: table rows uniform on the unit sphere,
// weights Gaussian scaled by 1/sqrt(fan_in), biases small Gaussian.
ParamVector init_params(const EncoderSpec& spec, std::uint64_t seed);

// Forward pass with the intermediates needed for back-propagation.
struct Encoded {
  std::vector<double> feature;  // final output (normalized if enabled)
  std::vector<double> raw;      // pre-normalization output
  std::vector<double> hidden;   // mlp2 tanh activations
  double raw_norm = 0.0;
};

Encoded encode_full(const Item& item, const ParamVector& params, Side side,
                    const EncoderSpec& spec);

std::vector<double> encode(const Item& item, const ParamVector& params, Side side,
                           const EncoderSpec& spec);

double similarity(const Item& x, const Item& y, const ParamVector& params,
                  const EncoderSpec& spec);

// Accumulates `down^T d(feature)/d(theta)` for one side into grad
// (grad += backprop of `down` through the side's network at `item`).
void accumulate_feature_grad(const Item& item, const ParamVector& params,
                             Side side, const EncoderSpec& spec,
                             const Encoded& enc, const std::vector<double>& down,
                             ParamVector& grad);

// H(x, y; theta) = grad_theta [ phi(x)^T psi(y) ] as a full-length vector.
ParamVector grad_similarity(const Item& x, const Item& y, const ParamVector& params,
                            const EncoderSpec& spec);

// Central finite differences of similarity(); test/diagnostic oracle only.
ParamVector fd_grad_similarity(const Item& x, const Item& y, const ParamVector& params,
                               const EncoderSpec& spec, double h);

}  // namespace emc2
