#pragma once

#include <cstdint>
#include <vector>

#include "emc2/dataset.hpp"
#include "emc2/loss.hpp"
#include "emc2/param_vector.hpp"

namespace emc2::diag {

// Exact single-chain transition matrix; column index = source state, so every
// column sums to 1.
struct KernelMatrix {
  int n = 0;
  std::vector<double> a;  // a[to * n + from]

  double& at(int to, int from) { return a[static_cast<std::size_t>(to) * n + from]; }
  double at(int to, int from) const { return a[static_cast<std::size_t>(to) * n + from]; }
  double column_sum(int from) const;
  KernelMatrix multiply(const KernelMatrix& rhs) const;
  KernelMatrix power(int r) const;
  static KernelMatrix identity(int n);
};

// Off-diagonal (z', z): (1/m_neg) min{1, Q(z -> z')}; the diagonal carries the
// self-proposal mass plus all rejection mass. Guarded at m_neg <= 4096.
KernelMatrix build_exact_kernel(const Dataset& data, int anchor_idx,
                                const ParamVector& params, const EncoderSpec& spec,
                                const LossParams& loss);

// Geometric mixing rate 1 - BR / (2 m m_neg exp(2 c^2 beta)); requires
// BR <= m m_neg exp(2 c^2 beta).
double lemma1_rate_bound(double B, double R, double m, double m_neg, double c,
                         double beta);

// Per-step transition-kernel Lipschitz bound 2^(R+1) B L_P exp(2 c^2 beta) beta.
double lemma2_lipschitz_bound(int R, double B, double L_P, double c, double beta);

// Half L1 distance between finite distributions.
double tv_distance(const std::vector<double>& a, const std::vector<double>& b);

struct MixingRow {
  int tau = 0;
  double tv = 0.0;
  double bound = 0.0;  // single-chain rate^tau
};

struct MixingCurve {
  std::vector<MixingRow> rows;
  bool exact = false;
};

// Exact mode (m_neg <= 64): TV(K^tau delta_z, pi) maximized over the initial
// state z. Sampled mode: empirical histograms over `replicas` chains started
// at the lowest-mass state (replicas >= 10^4 enforced).
MixingCurve empirical_mixing_curve(const Dataset& data, int anchor_idx,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss, int max_steps,
                                   int replicas, std::uint64_t seed);

struct PerturbationProbe {
  double measured_max_diff = 0.0;
  double bound = 0.0;
};

// Max entry of |K_theta^R - K_theta'^R| against the R-step analytic bound
// 2 (2^R - 1) L_P exp(2 c^2 beta) beta ||theta - theta'||.
PerturbationProbe kernel_perturbation_probe(const Dataset& data, int anchor_idx,
                                            const ParamVector& theta,
                                            const ParamVector& theta_prime,
                                            const EncoderSpec& spec,
                                            const LossParams& loss, int R, double L_P);

struct TheoryConstants {
  double rho_bar = 0.0;
  double sigma_bar = 0.0;
  double L_bar_P = 0.0;
  double L_bar_H = 0.0;
  double L_PH_0 = 0.0;
  double L_PH_1 = 0.0;
  double loss_gap_bound = 0.0;  // 4 beta
};

TheoryConstants theory_constants(double B, double R, double m, double m_neg, double c,
                                 double beta, double L_P, double L_H, double sigma);

// Empirical (lower-bound) estimates of the model constants, taken as maxima
// over seeded finite-difference probes of norm `scale` and full enumeration
// of the gradient deviations.
struct ModelConstants {
  double L_P = 0.0;
  double L_H = 0.0;
  double sigma = 0.0;
};

ModelConstants estimate_model_constants(const Dataset& data, const ParamVector& params,
                                        const EncoderSpec& spec, const LossParams& loss,
                                        int n_probes, double scale, std::uint64_t seed);

enum class NegSource { Chain, ExactSoftmax };

struct GradBiasReport {
  double bias_norm = 0.0;
  double std_error = 0.0;  // sqrt(sum_j Var(mean_j))
  std::vector<double> mean;
  std::vector<double> se;  // per-component standard error of the mean
  std::vector<double> exact;
};

// Freezes theta and averages n_estimates independent stochastic gradient
// estimates. Chain mode starts fresh uniformly-initialized chains and runs
// (R, P) segments; ExactSoftmax draws the retained negatives i.i.d. from the
// enumerated softmax (unbiasedness oracle).
GradBiasReport grad_bias_estimate(const Dataset& data, const ParamVector& params,
                                  const EncoderSpec& spec, const LossParams& loss,
                                  int B, int R, int P, int n_estimates,
                                  std::uint64_t seed, NegSource source);

struct LossRangeReport {
  double loss = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool pass = false;
};

// global_loss within [-2 c^2 beta + log m_neg, 2 c^2 beta + log m_neg].
LossRangeReport loss_range_check(const Dataset& data, const ParamVector& params,
                                 const EncoderSpec& spec, const LossParams& loss);

struct AcceptanceReport {
  double measured_min_q = 0.0;
  double bound = 0.0;  // exp(-2 c^2 beta)
  bool pass = false;
};

// Minimum acceptance ratio over all (anchor, proposal, state) triples,
// computed from the per-anchor similarity extremes.
AcceptanceReport min_acceptance_check(const Dataset& data, const ParamVector& params,
                                      const EncoderSpec& spec, const LossParams& loss);

}  // namespace emc2::diag
