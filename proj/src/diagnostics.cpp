#include "emc2/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emc2/encoder.hpp"
#include "emc2/errors.hpp"
#include "emc2/optimizer.hpp"
#include "emc2/rng.hpp"
#include "emc2/sampler.hpp"

namespace emc2::diag {

namespace {

constexpr int kKernelGuard = 4096;
constexpr int kExactTvGuard = 64;
constexpr int kPowerGuard = 16;

std::vector<double> anchor_similarities(const Dataset& data, int anchor_idx,
                                        const EncodedTable& table) {
  const int x = data.anchors[anchor_idx];
  const auto& negs = data.neg_lists[anchor_idx];
  std::vector<double> s(negs.size());
  for (std::size_t j = 0; j < negs.size(); ++j) s[j] = table.sim(x, negs[j]);
  return s;
}

}  // namespace

double KernelMatrix::column_sum(int from) const {
  double s = 0.0;
  for (int to = 0; to < n; ++to) s += at(to, from);
  return s;
}

KernelMatrix KernelMatrix::multiply(const KernelMatrix& rhs) const {
  KernelMatrix out;
  out.n = n;
  out.a.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int to = 0; to < n; ++to) {
    for (int mid = 0; mid < n; ++mid) {
      const double lhs = at(to, mid);
      if (lhs == 0.0) continue;
      for (int from = 0; from < n; ++from) {
        out.at(to, from) += lhs * rhs.at(mid, from);
      }
    }
  }
  return out;
}

KernelMatrix KernelMatrix::power(int r) const {
  KernelMatrix out = identity(n);
  for (int i = 0; i < r; ++i) out = multiply(out);
  return out;
}

KernelMatrix KernelMatrix::identity(int n) {
  KernelMatrix out;
  out.n = n;
  out.a.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

KernelMatrix build_exact_kernel(const Dataset& data, int anchor_idx,
                                const ParamVector& params, const EncoderSpec& spec,
                                const LossParams& loss) {
  loss.validate();
  const int n = data.m_neg;
  if (n > kKernelGuard) {
    throw SizeError("build_exact_kernel: m_neg = " + std::to_string(n) +
                    " exceeds the enumeration guard of " + std::to_string(kKernelGuard));
  }
  EncodedTable table(data, params, spec);
  const std::vector<double> s = anchor_similarities(data, anchor_idx, table);

  KernelMatrix k;
  k.n = n;
  k.a.assign(static_cast<std::size_t>(n) * n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int from = 0; from < n; ++from) {
    double reject_mass = 0.0;
    for (int to = 0; to < n; ++to) {
      if (to == from) continue;
      const double accept =
          std::min(1.0, std::exp(loss.beta * (s[to] - s[from])));
      k.at(to, from) = inv_n * accept;
      reject_mass += 1.0 - accept;
    }
    k.at(from, from) = inv_n + inv_n * reject_mass;
  }
  return k;
}

double lemma1_rate_bound(double B, double R, double m, double m_neg, double c,
                         double beta) {
  const double cap = m * m_neg * std::exp(2.0 * c * c * beta);
  if (!(B * R <= cap)) {
    throw DomainError("lemma1_rate_bound: requires BR <= m * m_neg * exp(2c^2 beta)");
  }
  return 1.0 - (B * R) / (2.0 * cap);
}

double lemma2_lipschitz_bound(int R, double B, double L_P, double c, double beta) {
  return std::pow(2.0, R + 1) * B * L_P * std::exp(2.0 * c * c * beta) * beta;
}

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

MixingCurve empirical_mixing_curve(const Dataset& data, int anchor_idx,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss, int max_steps,
                                   int replicas, std::uint64_t seed) {
  loss.validate();
  const int n = data.m_neg;
  if (n > kKernelGuard) {
    throw SizeError("empirical_mixing_curve: m_neg exceeds the enumeration guard");
  }
  const double c = spec.normalize ? 1.0 : spec.norm_bound;
  const double rate = lemma1_rate_bound(1.0, 1.0, 1.0, n, c, loss.beta);
  const std::vector<double> pi =
      softmax_neg_dist(data, anchor_idx, params, spec, loss);

  MixingCurve curve;
  curve.rows.reserve(max_steps + 1);

  if (n <= kExactTvGuard) {
    curve.exact = true;
    const KernelMatrix k = build_exact_kernel(data, anchor_idx, params, spec, loss);
    KernelMatrix cur = KernelMatrix::identity(n);
    double bound = 1.0;
    for (int tau = 0; tau <= max_steps; ++tau) {
      double worst = 0.0;
      for (int z0 = 0; z0 < n; ++z0) {
        double tv = 0.0;
        for (int z = 0; z < n; ++z) tv += std::abs(cur.at(z, z0) - pi[z]);
        worst = std::max(worst, 0.5 * tv);
      }
      curve.rows.push_back({tau, worst, bound});
      bound *= rate;
      if (tau < max_steps) cur = k.multiply(cur);
    }
    return curve;
  }

  if (replicas < 10000) {
    throw ConfigError("empirical_mixing_curve: sampled mode needs >= 10^4 replicas");
  }
  curve.exact = false;
  // Worst-case-ish start: the lowest-mass state.
  const int z0 = static_cast<int>(
      std::min_element(pi.begin(), pi.end()) - pi.begin());
  EncodedTable table(data, params, spec);
  const std::vector<double> s = anchor_similarities(data, anchor_idx, table);

  std::vector<int> state(replicas, z0);  // positions within the negative list
  std::vector<RandomStream> streams;
  streams.reserve(replicas);
  for (int r = 0; r < replicas; ++r) {
    streams.emplace_back(seed, Lane::Probe, static_cast<std::uint64_t>(anchor_idx),
                         static_cast<std::uint64_t>(r));
  }

  for (int tau = 0; tau <= max_steps; ++tau) {
    std::vector<double> hist(n, 0.0);
    for (int r = 0; r < replicas; ++r) hist[state[r]] += 1.0;
    for (double& h : hist) h /= static_cast<double>(replicas);
    curve.rows.push_back({tau, tv_distance(hist, pi), std::pow(rate, tau)});
    if (tau == max_steps) break;
    for (int r = 0; r < replicas; ++r) {
      auto& rng = streams[r];
      const int prop = static_cast<int>(rng.uniform_index(n));
      const double q = std::exp(loss.beta * (s[prop] - s[state[r]]));
      if (q >= 1.0) {
        rng.skip();
        state[r] = prop;
      } else if (rng.next_double() < q) {
        state[r] = prop;
      }
    }
  }
  return curve;
}

PerturbationProbe kernel_perturbation_probe(const Dataset& data, int anchor_idx,
                                            const ParamVector& theta,
                                            const ParamVector& theta_prime,
                                            const EncoderSpec& spec,
                                            const LossParams& loss, int R, double L_P) {
  if (R < 1 || R > kPowerGuard) {
    throw SizeError("kernel_perturbation_probe: R must lie in [1, " +
                    std::to_string(kPowerGuard) + "]");
  }
  const KernelMatrix ka =
      build_exact_kernel(data, anchor_idx, theta, spec, loss).power(R);
  const KernelMatrix kb =
      build_exact_kernel(data, anchor_idx, theta_prime, spec, loss).power(R);
  PerturbationProbe probe;
  for (std::size_t i = 0; i < ka.a.size(); ++i) {
    probe.measured_max_diff = std::max(probe.measured_max_diff,
                                       std::abs(ka.a[i] - kb.a[i]));
  }
  ParamVector delta = theta;
  delta.axpy(-1.0, theta_prime);
  const double c = spec.normalize ? 1.0 : spec.norm_bound;
  probe.bound = 2.0 * (std::pow(2.0, R) - 1.0) * L_P *
                std::exp(2.0 * c * c * loss.beta) * loss.beta * delta.norm();
  return probe;
}

TheoryConstants theory_constants(double B, double R, double m, double m_neg, double c,
                                 double beta, double L_P, double L_H, double sigma) {
  TheoryConstants tc;
  tc.rho_bar = lemma1_rate_bound(B, R, m, m_neg, c, beta);
  const double gap = 1.0 - tc.rho_bar;  // BR / (2 m m_neg exp(2c^2 beta))
  tc.sigma_bar = 2.0 * beta * sigma;
  tc.L_bar_P = lemma2_lipschitz_bound(static_cast<int>(R), B, L_P, c, beta);
  tc.L_bar_H = 2.0 * beta * L_H;
  tc.L_PH_0 = tc.sigma_bar * tc.rho_bar / gap;
  tc.L_PH_1 = 6.0 * std::pow(2.0, R + 1.0) * B * std::exp(2.0 * c * c * beta) *
                  beta * beta * sigma * L_P / (gap * gap) +
              2.0 * beta * L_H / gap;
  tc.loss_gap_bound = 4.0 * beta;
  return tc;
}

ModelConstants estimate_model_constants(const Dataset& data, const ParamVector& params,
                                        const EncoderSpec& spec, const LossParams& loss,
                                        int n_probes, double scale, std::uint64_t seed) {
  loss.validate();
  ModelConstants out;

  // L_P, L_H: max difference quotients along random directions of norm `scale`.
  RandomStream rng(seed, Lane::Probe, 0, 0);
  ParamVector theta = params;
  for (int probe = 0; probe < n_probes; ++probe) {
    const int k = static_cast<int>(rng.uniform_index(data.num_anchors()));
    const auto& negs = data.neg_lists[k];
    const int z = negs[rng.uniform_index(negs.size())];
    const Item& x = data.anchor_item(k);
    const Item& zi = data.items[z];

    std::vector<double> dir(params.size());
    double nrm2 = 0.0;
    for (auto& v : dir) {
      v = rng.next_normal();
      nrm2 += v * v;
    }
    const double mul = scale / std::sqrt(nrm2);
    for (std::size_t i = 0; i < dir.size(); ++i) {
      theta[i] = params[i] + dir[i] * mul;
    }

    const double ds = std::abs(similarity(x, zi, theta, spec) -
                               similarity(x, zi, params, spec));
    out.L_P = std::max(out.L_P, ds / scale);

    ParamVector dh = grad_similarity(x, zi, theta, spec);
    dh.axpy(-1.0, grad_similarity(x, zi, params, spec));
    out.L_H = std::max(out.L_H, dh.norm() / scale);
  }

  // sigma: exact deviation maxima by full enumeration at this theta.
  const int m = data.num_anchors();
  ParamVector mean_pos = params.zeros_like();
  for (int k = 0; k < m; ++k) {
    mean_pos.axpy(1.0 / m, grad_similarity(data.anchor_item(k), data.positive_item(k),
                                           params, spec));
  }
  ParamVector mean_neg = params.zeros_like();
  for (int k = 0; k < m; ++k) {
    const auto p = softmax_neg_dist(data, k, params, spec, loss);
    for (std::size_t j = 0; j < p.size(); ++j) {
      mean_neg.axpy(p[j] / m, grad_similarity(data.anchor_item(k),
                                              data.items[data.neg_lists[k][j]], params,
                                              spec));
    }
  }
  for (int k = 0; k < m; ++k) {
    ParamVector dev = grad_similarity(data.anchor_item(k), data.positive_item(k),
                                      params, spec);
    dev.axpy(-1.0, mean_pos);
    out.sigma = std::max(out.sigma, dev.norm());
    for (int z : data.neg_lists[k]) {
      ParamVector devn = grad_similarity(data.anchor_item(k), data.items[z], params, spec);
      devn.axpy(-1.0, mean_neg);
      out.sigma = std::max(out.sigma, devn.norm());
    }
  }
  return out;
}

GradBiasReport grad_bias_estimate(const Dataset& data, const ParamVector& params,
                                  const EncoderSpec& spec, const LossParams& loss,
                                  int B, int R, int P, int n_estimates,
                                  std::uint64_t seed, NegSource source) {
  loss.validate();
  if (B < 1 || B > data.num_anchors()) {
    throw ConfigError("grad_bias_estimate: B must lie in [1, m]");
  }
  if (P < 0 || P >= R) throw ConfigError("grad_bias_estimate: requires 0 <= P < R");

  EncodedTable table(data, params, spec);
  const ParamVector exact = exact_grad(data, params, spec, loss);
  const std::size_t p = params.size();
  const int kept = R - P;

  // Per-anchor softmax CDFs for the oracle sampler.
  std::vector<std::vector<double>> cdf;
  if (source == NegSource::ExactSoftmax) {
    cdf.resize(data.num_anchors());
    for (int k = 0; k < data.num_anchors(); ++k) {
      const auto pk = softmax_neg_dist(data, k, table, loss);
      cdf[k].resize(pk.size());
      double acc = 0.0;
      for (std::size_t j = 0; j < pk.size(); ++j) {
        acc += pk[j];
        cdf[k][j] = acc;
      }
      cdf[k].back() = 1.0;
    }
  }

  constexpr int kChunk = 512;
  const int n_chunks = (n_estimates + kChunk - 1) / kChunk;
  std::vector<std::vector<double>> sum_chunk(n_chunks, std::vector<double>(p, 0.0));
  std::vector<std::vector<double>> sq_chunk(n_chunks, std::vector<double>(p, 0.0));

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int c = 0; c < n_chunks; ++c) {
    auto& sum = sum_chunk[c];
    auto& sq = sq_chunk[c];
    const int lo = c * kChunk;
    const int hi = std::min(n_estimates, lo + kChunk);
    for (int e = lo; e < hi; ++e) {
      RandomStream batch_rng(seed, Lane::BiasEstimate, static_cast<std::uint64_t>(e), 0);
      std::vector<int> idx(data.num_anchors());
      for (int i = 0; i < data.num_anchors(); ++i) idx[i] = i;
      for (int i = 0; i < B; ++i) {
        const int j = i + static_cast<int>(batch_rng.uniform_index(idx.size() - i));
        std::swap(idx[i], idx[j]);
      }

      MiniBatchSample sample;
      for (int i = 0; i < B; ++i) {
        const int k = idx[i];
        RandomStream rng(seed, Lane::BiasEstimate, static_cast<std::uint64_t>(e),
                         static_cast<std::uint64_t>(1 + k));
        SampleEntry entry{data.anchor_item(k), data.positive_item(k), {}};
        if (source == NegSource::ExactSoftmax) {
          for (int r = 0; r < kept; ++r) {
            const double u = rng.next_double();
            const auto it = std::upper_bound(cdf[k].begin(), cdf[k].end(), u);
            const std::size_t j = std::min<std::size_t>(
                static_cast<std::size_t>(it - cdf[k].begin()), cdf[k].size() - 1);
            entry.retained.push_back(data.items[data.neg_lists[k][j]]);
          }
        } else {
          ChainTable fresh;
          fresh.states.assign(data.num_anchors(), 0);
          fresh.iteration_touched.assign(data.num_anchors(), 0);
          const auto& negs = data.neg_lists[k];
          fresh.states[k] = negs[rng.uniform_index(negs.size())];
          const auto ids = run_chain_segment(k, fresh, params, spec, loss, data, R, P,
                                             rng, &table);
          for (int id : ids) entry.retained.push_back(data.items[id]);
        }
        sample.push_back(std::move(entry));
      }
      const ParamVector est = emc2_gradient_estimate(sample, params, spec, loss);
      for (std::size_t i = 0; i < p; ++i) {
        sum[i] += est[i];
        sq[i] += est[i] * est[i];
      }
    }
  }

  GradBiasReport report;
  report.mean.assign(p, 0.0);
  report.se.assign(p, 0.0);
  report.exact.assign(p, 0.0);
  std::vector<double> sum(p, 0.0), sq(p, 0.0);
  for (int c = 0; c < n_chunks; ++c) {
    for (std::size_t i = 0; i < p; ++i) {
      sum[i] += sum_chunk[c][i];
      sq[i] += sq_chunk[c][i];
    }
  }
  const double n = static_cast<double>(n_estimates);
  double bias2 = 0.0;
  double var_of_mean = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    report.mean[i] = sum[i] / n;
    const double var = std::max(0.0, (sq[i] - n * report.mean[i] * report.mean[i]) /
                                         (n - 1.0));
    report.se[i] = std::sqrt(var / n);
    report.exact[i] = exact[i];
    const double d = report.mean[i] - exact[i];
    bias2 += d * d;
    var_of_mean += var / n;
  }
  report.bias_norm = std::sqrt(bias2);
  report.std_error = std::sqrt(var_of_mean);
  return report;
}

LossRangeReport loss_range_check(const Dataset& data, const ParamVector& params,
                                 const EncoderSpec& spec, const LossParams& loss) {
  const double c = spec.normalize ? 1.0 : spec.norm_bound;
  LossRangeReport report;
  report.loss = global_loss(data, params, spec, loss);
  const double width = 2.0 * c * c * loss.beta;
  const double log_mneg = std::log(static_cast<double>(data.m_neg));
  report.lo = -width + log_mneg;
  report.hi = width + log_mneg;
  // the interval can have zero width (beta = 0); allow for rounding
  const double tol = 1e-9;
  report.pass = report.loss >= report.lo - tol && report.loss <= report.hi + tol;
  return report;
}

AcceptanceReport min_acceptance_check(const Dataset& data, const ParamVector& params,
                                      const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  EncodedTable table(data, params, spec);
  // min over triples of exp(beta (s_z - s_Z)) = exp(beta min_k (min_s - max_s)).
  double worst_gap = 0.0;
  for (int k = 0; k < data.num_anchors(); ++k) {
    const auto s = anchor_similarities(data, k, table);
    const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    worst_gap = std::min(worst_gap, *mn - *mx);
  }
  const double c = spec.normalize ? 1.0 : spec.norm_bound;
  AcceptanceReport report;
  report.measured_min_q = std::exp(loss.beta * worst_gap);
  report.bound = std::exp(-2.0 * c * c * loss.beta);
  report.pass = report.measured_min_q >= report.bound - 1e-15;
  return report;
}

}  // namespace emc2::diag
