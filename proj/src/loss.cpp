#include "emc2/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emc2/errors.hpp"

namespace emc2 {

namespace {

constexpr int kGradChunk = 64;  // anchors per reduction slot in the parallel kernel

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Per-anchor loss term: -beta * sim(x, y) + logsumexp_z beta * sim(x, z).
double anchor_loss_term(const Dataset& data, int k, const EncodedTable& table,
                        const LossParams& loss) {
  const int x = data.anchors[k];
  const int y = data.positives[k];
  std::vector<double> scaled(data.neg_lists[k].size());
  for (std::size_t j = 0; j < scaled.size(); ++j) {
    scaled[j] = loss.beta * table.sim(x, data.neg_lists[k][j]);
  }
  return -loss.beta * table.sim(x, y) + log_sum_exp(scaled);
}

// Per-anchor gradient term of m * loss (the 1/m average and a final
// finiteness check are applied by the caller):
//   beta * [ sum_z p(z) H(x,z) - H(x,y) ].
void anchor_grad_term(const Dataset& data, int k, const EncodedTable& table,
                      const ParamVector& params, const EncoderSpec& spec,
                      const LossParams& loss, ParamVector& out) {
  const int x = data.anchors[k];
  const int y = data.positives[k];
  const auto& negs = data.neg_lists[k];
  const std::vector<double> p = softmax_neg_dist(data, k, table, loss);
  const std::size_t d = table.phi(x).feature.size();

  // x side: one backward pass with the aggregated downstream vector
  //   beta * (sum_z p(z) psi(z) - psi(y)).
  std::vector<double> down_x(d, 0.0);
  for (std::size_t j = 0; j < negs.size(); ++j) {
    const auto& fz = table.psi(negs[j]).feature;
    for (std::size_t i = 0; i < d; ++i) down_x[i] += p[j] * fz[i];
  }
  {
    const auto& fy = table.psi(y).feature;
    for (std::size_t i = 0; i < d; ++i) down_x[i] = loss.beta * (down_x[i] - fy[i]);
  }
  accumulate_feature_grad(data.items[x], params, Side::Phi, spec, table.phi(x),
                          down_x, out);

  // y side and each negative's side carry phi(x) scaled by their weights.
  const auto& fx = table.phi(x).feature;
  std::vector<double> down(d);
  for (std::size_t i = 0; i < d; ++i) down[i] = -loss.beta * fx[i];
  accumulate_feature_grad(data.items[y], params, Side::Psi, spec, table.psi(y),
                          down, out);
  for (std::size_t j = 0; j < negs.size(); ++j) {
    const double w = loss.beta * p[j];
    for (std::size_t i = 0; i < d; ++i) down[i] = w * fx[i];
    accumulate_feature_grad(data.items[negs[j]], params, Side::Psi, spec,
                            table.psi(negs[j]), down, out);
  }
}

void check_grad_finite(const ParamVector& g, const char* what) {
  if (!g.all_finite()) throw NumericError(std::string(what) + ": non-finite gradient");
}

}  // namespace

void LossParams::validate() const {
  // beta = 0 is the degenerate uniform limit; the diagnostics evaluate the
  // analytic bounds there. Training configs require strictly positive beta.
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("loss: beta must be nonnegative and finite");
  }
}

double log_sum_exp(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("log_sum_exp of empty set");
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) throw NumericError("log_sum_exp: non-finite input");
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

EncodedTable::EncodedTable(const Dataset& data, const ParamVector& params,
                           const EncoderSpec& spec)
    : unimodal_(spec.modality == Modality::Unimodal) {
  const int n = static_cast<int>(data.items.size());
  phi_.resize(n);
  if (!unimodal_) psi_.resize(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n; ++i) {
    phi_[i] = encode_full(data.items[i], params, Side::Phi, spec);
    if (!unimodal_) psi_[i] = encode_full(data.items[i], params, Side::Psi, spec);
  }
}

double EncodedTable::sim(int x_id, int y_id) const {
  return dot(phi(x_id).feature, psi(y_id).feature);
}

std::vector<double> softmax_neg_dist(const Dataset& data, int anchor_idx,
                                     const EncodedTable& table, const LossParams& loss) {
  loss.validate();
  const auto& negs = data.neg_lists[anchor_idx];
  if (negs.empty()) throw ConfigError("softmax_neg_dist: empty negative set");
  const int x = data.anchors[anchor_idx];
  std::vector<double> scaled(negs.size());
  for (std::size_t j = 0; j < negs.size(); ++j) {
    scaled[j] = loss.beta * table.sim(x, negs[j]);
  }
  const double lse = log_sum_exp(scaled);
  std::vector<double> p(negs.size());
  for (std::size_t j = 0; j < negs.size(); ++j) p[j] = std::exp(scaled[j] - lse);
  return p;
}

std::vector<double> softmax_neg_dist(const Dataset& data, int anchor_idx,
                                     const ParamVector& params, const EncoderSpec& spec,
                                     const LossParams& loss) {
  EncodedTable table(data, params, spec);
  return softmax_neg_dist(data, anchor_idx, table, loss);
}

double log_partition(const Dataset& data, int anchor_idx, const ParamVector& params,
                     const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  const auto& negs = data.neg_lists[anchor_idx];
  if (negs.empty()) throw ConfigError("log_partition: empty negative set");
  EncodedTable table(data, params, spec);
  const int x = data.anchors[anchor_idx];
  std::vector<double> scaled(negs.size());
  for (std::size_t j = 0; j < negs.size(); ++j) {
    scaled[j] = loss.beta * table.sim(x, negs[j]);
  }
  return log_sum_exp(scaled);
}

double global_loss(const Dataset& data, const ParamVector& params,
                   const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  data.validate();
  EncodedTable table(data, params, spec);
  const int m = data.num_anchors();
  std::vector<double> term(m);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int k = 0; k < m; ++k) {
    term[k] = anchor_loss_term(data, k, table, loss);
  }
  double acc = 0.0;
  for (int k = 0; k < m; ++k) acc += term[k];
  const double value = acc / static_cast<double>(m);
  if (!std::isfinite(value)) throw NumericError("global_loss: non-finite value");
  return value;
}

ParamVector exact_grad(const Dataset& data, const ParamVector& params,
                       const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  data.validate();
  EncodedTable table(data, params, spec);
  const int m = data.num_anchors();
  const int n_chunks = (m + kGradChunk - 1) / kGradChunk;
  std::vector<ParamVector> chunk(n_chunks, params.zeros_like());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int c = 0; c < n_chunks; ++c) {
    const int lo = c * kGradChunk;
    const int hi = std::min(m, lo + kGradChunk);
    for (int k = lo; k < hi; ++k) {
      anchor_grad_term(data, k, table, params, spec, loss, chunk[c]);
    }
  }
  ParamVector grad = params.zeros_like();
  for (int c = 0; c < n_chunks; ++c) grad.axpy(1.0, chunk[c]);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= inv_m;
  check_grad_finite(grad, "exact_grad");
  return grad;
}

namespace serial {

double global_loss(const Dataset& data, const ParamVector& params,
                   const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  data.validate();
  EncodedTable table(data, params, spec);
  double acc = 0.0;
  for (int k = 0; k < data.num_anchors(); ++k) {
    acc += anchor_loss_term(data, k, table, loss);
  }
  const double value = acc / static_cast<double>(data.num_anchors());
  if (!std::isfinite(value)) throw NumericError("global_loss: non-finite value");
  return value;
}

ParamVector exact_grad(const Dataset& data, const ParamVector& params,
                       const EncoderSpec& spec, const LossParams& loss) {
  loss.validate();
  data.validate();
  EncodedTable table(data, params, spec);
  ParamVector grad = params.zeros_like();
  for (int k = 0; k < data.num_anchors(); ++k) {
    anchor_grad_term(data, k, table, params, spec, loss, grad);
  }
  const double inv_m = 1.0 / static_cast<double>(data.num_anchors());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= inv_m;
  check_grad_finite(grad, "exact_grad");
  return grad;
}

}  // namespace serial

double infonce_loss(const std::vector<PosPair>& batch,
                    const std::vector<std::vector<Item>>& neg_batches,
                    const ParamVector& params, const EncoderSpec& spec,
                    const LossParams& loss) {
  loss.validate();
  if (batch.empty()) throw ConfigError("infonce_loss: empty batch");
  if (neg_batches.size() != batch.size()) {
    throw ConfigError("infonce_loss: batch/negative list count mismatch");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (neg_batches[k].empty()) throw ConfigError("infonce_loss: empty negative list");
    const auto fx = encode_full(batch[k].anchor, params, Side::Phi, spec);
    const auto fy = encode_full(batch[k].positive, params, Side::Psi, spec);
    std::vector<double> scaled(neg_batches[k].size());
    for (std::size_t j = 0; j < scaled.size(); ++j) {
      const auto fz = encode_full(neg_batches[k][j], params, Side::Psi, spec);
      scaled[j] = loss.beta * dot(fx.feature, fz.feature);
    }
    acc += -loss.beta * dot(fx.feature, fy.feature) + log_sum_exp(scaled);
  }
  const double value = acc / static_cast<double>(batch.size());
  if (!std::isfinite(value)) throw NumericError("infonce_loss: non-finite value");
  return value;
}

ParamVector infonce_grad(const std::vector<PosPair>& batch,
                         const std::vector<std::vector<Item>>& neg_batches,
                         const ParamVector& params, const EncoderSpec& spec,
                         const LossParams& loss) {
  loss.validate();
  if (batch.empty()) throw ConfigError("infonce_grad: empty batch");
  if (neg_batches.size() != batch.size()) {
    throw ConfigError("infonce_grad: batch/negative list count mismatch");
  }
  ParamVector grad = params.zeros_like();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& negs = neg_batches[k];
    if (negs.empty()) throw ConfigError("infonce_grad: empty negative list");
    const auto fx = encode_full(batch[k].anchor, params, Side::Phi, spec);
    const auto fy = encode_full(batch[k].positive, params, Side::Psi, spec);
    std::vector<Encoded> fz(negs.size());
    std::vector<double> scaled(negs.size());
    for (std::size_t j = 0; j < negs.size(); ++j) {
      fz[j] = encode_full(negs[j], params, Side::Psi, spec);
      scaled[j] = loss.beta * dot(fx.feature, fz[j].feature);
    }
    const double lse = log_sum_exp(scaled);
    std::vector<double> p(negs.size());
    for (std::size_t j = 0; j < negs.size(); ++j) p[j] = std::exp(scaled[j] - lse);

    const std::size_t d = fx.feature.size();
    std::vector<double> down_x(d, 0.0);
    for (std::size_t j = 0; j < negs.size(); ++j) {
      for (std::size_t i = 0; i < d; ++i) down_x[i] += p[j] * fz[j].feature[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      down_x[i] = inv_b * loss.beta * (down_x[i] - fy.feature[i]);
    }
    accumulate_feature_grad(batch[k].anchor, params, Side::Phi, spec, fx, down_x, grad);

    std::vector<double> down(d);
    for (std::size_t i = 0; i < d; ++i) down[i] = -inv_b * loss.beta * fx.feature[i];
    accumulate_feature_grad(batch[k].positive, params, Side::Psi, spec, fy, down, grad);
    for (std::size_t j = 0; j < negs.size(); ++j) {
      const double w = inv_b * loss.beta * p[j];
      for (std::size_t i = 0; i < d; ++i) down[i] = w * fx.feature[i];
      accumulate_feature_grad(negs[j], params, Side::Psi, spec, fz[j], down, grad);
    }
  }
  check_grad_finite(grad, "infonce_grad");
  return grad;
}

}  // namespace emc2
