#include "emc2/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "emc2/errors.hpp"

namespace emc2 {

namespace {

using Clock = std::chrono::steady_clock;

long long ms_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start)
      .count();
}

// k distinct indices from [0, n), deterministic partial Fisher-Yates.
std::vector<int> draw_without_replacement(int n, int k, RandomStream& rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.uniform_index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

// 2b views, first view of each drawn base then second view (the layout the
// in-batch sampler and the positive pairing below assume).
std::vector<Item> build_batch_views(const Dataset& data, const std::vector<int>& bases,
                                    long long it1, const ViewGenerator& views,
                                    RandomStream& rng) {
  const int b = static_cast<int>(bases.size());
  std::vector<Item> batch(2 * b);
  for (int i = 0; i < b; ++i) {
    if (views) {
      batch[i] = views(it1, bases[i], 0);
      batch[b + i] = views(it1, bases[i], 1);
      continue;
    }
    const auto& group = data.base_views[bases[i]];
    const int a = static_cast<int>(group.size());
    int v1 = 0, v2 = 1;
    if (a > 2) {
      v1 = static_cast<int>(rng.uniform_index(a));
      v2 = static_cast<int>(rng.uniform_index(a - 1));
      if (v2 >= v1) ++v2;
    }
    batch[i] = data.items[group[v1]];
    batch[b + i] = data.items[group[v2]];
  }
  return batch;
}

int sibling_index(int j, int b) { return j < b ? j + b : j - b; }

}  // namespace

void TrainConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("train: beta must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("train: gamma must be positive");
  if (total_iterations < 0) throw ConfigError("train: total_iterations must be >= 0");
  if (R < 0) throw ConfigError("train: R must be >= 0");
  const int r_eff = effective_R(batch_size);
  const int p_eff = effective_P(batch_size);
  if (algorithm == Algorithm::Emc2) {
    if (in_batch() && batch_size < 2) {
      throw ConfigError("train: in-batch sampling needs batch_size >= 2");
    }
    if (p_eff < 0 || p_eff >= r_eff) {
      throw ConfigError("train: requires 0 <= P < R");
    }
  }
  if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train: adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam eps must be positive");
}

int TrainConfig::effective_P(int b) const {
  if (P >= 0) return P;
  const int r = effective_R(b);
  if (in_batch()) return std::min(b, r - 1);
  return r - 1;
}

double TrainConfig::step_size() const {
  if (schedule == GammaSchedule::OneOverSqrtT) {
    return gamma / std::sqrt(static_cast<double>(std::max<long long>(total_iterations, 1)));
  }
  return gamma;
}

ParamVector emc2_gradient_estimate(const MiniBatchSample& sample,
                                   const ParamVector& params, const EncoderSpec& spec,
                                   const LossParams& loss) {
  loss.validate();
  if (sample.empty()) throw ConfigError("emc2_gradient_estimate: empty sample");
  const std::size_t n_kept = sample.front().retained.size();
  if (n_kept == 0) {
    throw ConfigError("emc2_gradient_estimate: R - P must be >= 1");
  }
  for (const auto& entry : sample) {
    if (entry.retained.size() != n_kept) {
      throw ConfigError("emc2_gradient_estimate: uneven retained counts");
    }
  }

  const double B = static_cast<double>(sample.size());
  const double w_neg = loss.beta / (B * static_cast<double>(n_kept));
  const double w_pos = loss.beta / B;
  const bool unimodal = spec.modality == Modality::Unimodal;

  ParamVector grad = params.zeros_like();
  for (const auto& entry : sample) {
    const auto fx = encode_full(entry.anchor, params, Side::Phi, spec);
    const auto fy = encode_full(entry.positive, params, Side::Psi, spec);
    const std::size_t d = fx.feature.size();

    std::vector<double> down_x(d, 0.0);
    std::vector<double> down(d);
    for (const auto& z : entry.retained) {
      const auto fz = unimodal ? encode_full(z, params, Side::Phi, spec)
                               : encode_full(z, params, Side::Psi, spec);
      for (std::size_t i = 0; i < d; ++i) down_x[i] += w_neg * fz.feature[i];
      for (std::size_t i = 0; i < d; ++i) down[i] = w_neg * fx.feature[i];
      accumulate_feature_grad(z, params, Side::Psi, spec, fz, down, grad);
    }
    for (std::size_t i = 0; i < d; ++i) down_x[i] -= w_pos * fy.feature[i];
    accumulate_feature_grad(entry.anchor, params, Side::Phi, spec, fx, down_x, grad);

    for (std::size_t i = 0; i < d; ++i) down[i] = -w_pos * fx.feature[i];
    accumulate_feature_grad(entry.positive, params, Side::Psi, spec, fy, down, grad);
  }
  return grad;
}

void sgd_update(ParamVector& params, const ParamVector& estimate, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("sgd_update: gamma must be >= 0");
  if (!estimate.all_finite()) throw NumericError("sgd_update: non-finite estimate");
  params.axpy(-gamma, estimate);
}

void adam_update(AdamState& state, ParamVector& params, const ParamVector& estimate,
                 double gamma, double beta1, double beta2, double eps) {
  if (!estimate.all_finite()) throw NumericError("adam_update: non-finite estimate");
  const std::size_t p = params.size();
  if (state.m.size() != p) {
    state.m.assign(p, 0.0);
    state.v.assign(p, 0.0);
    state.t = 0;
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < p; ++i) {
    const double g = estimate[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= gamma * mhat / (std::sqrt(vhat) + eps);
  }
}

void simclr_step(ParamVector& params, const std::vector<Item>& batch,
                 const EncoderSpec& spec, const LossParams& loss, double gamma,
                 AdamState* adam, double beta1, double beta2, double eps) {
  const int two_b = static_cast<int>(batch.size());
  if (two_b % 2 != 0 || two_b < 4) {
    throw ConfigError("simclr_step: need two views each of b >= 2 base items");
  }
  const int b = two_b / 2;
  std::vector<PosPair> pairs;
  std::vector<std::vector<Item>> negs;
  pairs.reserve(two_b);
  negs.reserve(two_b);
  for (int j = 0; j < two_b; ++j) {
    pairs.push_back({batch[j], batch[sibling_index(j, b)]});
    std::vector<Item> nj;
    nj.reserve(two_b - 2);
    for (int q = 0; q < two_b; ++q) {
      if (batch[q].base_id != batch[j].base_id) nj.push_back(batch[q]);
    }
    negs.push_back(std::move(nj));
  }
  const ParamVector grad = infonce_grad(pairs, negs, params, spec, loss);
  if (adam != nullptr) {
    adam_update(*adam, params, grad, gamma, beta1, beta2, eps);
  } else {
    sgd_update(params, grad, gamma);
  }
}

void exact_gd_step(ParamVector& params, const EncoderSpec& spec, const LossParams& loss,
                   const Dataset& data, double gamma) {
  const ParamVector grad = exact_grad(data, params, spec, loss);
  sgd_update(params, grad, gamma);
}

TrainState initial_train_state(const TrainConfig& config, const Dataset& data,
                               const EncoderSpec& spec, bool infinite_aug) {
  TrainState state;
  state.params = init_params(spec, config.seed);
  if (config.algorithm == Algorithm::Emc2) {
    if (config.in_batch()) {
      state.chains = init_base_chain_table(data, config.seed, infinite_aug);
    } else {
      state.chains = init_chain_table(data, config.seed);
    }
  }
  return state;
}

TrainResult run_training(const TrainConfig& config, const Dataset& data,
                         const EncoderSpec& spec, const ViewGenerator& views) {
  config.validate();
  return continue_training(config, data, spec,
                           initial_train_state(config, data, spec, views != nullptr),
                           views);
}

TrainResult continue_training(const TrainConfig& config, const Dataset& data,
                              const EncoderSpec& spec, TrainState state,
                              const ViewGenerator& views, long long stop_iteration) {
  config.validate();
  data.validate();
  const auto start_time = Clock::now();
  const LossParams loss{config.beta};
  const int b = config.batch_size;
  const long long T = config.total_iterations;
  const long long stop = stop_iteration < 0 ? T : std::min(stop_iteration, T);
  if (config.algorithm != Algorithm::ExactGd) {
    const int pool = config.algorithm == Algorithm::Emc2 && !config.in_batch()
                         ? data.num_anchors()
                         : data.num_bases();
    if (b > pool) {
      throw ConfigError("train: batch_size exceeds the available pool of " +
                        std::to_string(pool));
    }
  }

  TrainResult result;
  result.state = std::move(state);

  auto eval_row = [&]() {
    RunRow row;
    row.iter = result.state.iteration;
    row.samples_seen = result.state.samples_seen;
    row.loss = global_loss(data, result.state.params, spec, loss);
    row.grad_sq_norm = exact_grad(data, result.state.params, spec, loss).squared_norm();
    row.wall_ms = ms_since(start_time);
    result.record.rows.push_back(row);
  };

  auto diverged_row = [&](const std::string& why) {
    RunRow row;
    row.iter = result.state.iteration;
    row.samples_seen = result.state.samples_seen;
    row.wall_ms = ms_since(start_time);
    result.record.rows.push_back(row);
    result.diverged = true;
    result.message = why;
  };

  const bool want_evals = config.eval_every > 0 && T > 0;
  if (want_evals && result.state.iteration == 0) eval_row();

  while (result.state.iteration < stop) {
    const long long t = result.state.iteration;
    const long long it1 = t + 1;  // stream iteration field; 0 is reserved for init

    ParamVector estimate = result.state.params.zeros_like();
    try {
      switch (config.algorithm) {
        case Algorithm::ExactGd: {
          estimate = exact_grad(data, result.state.params, spec, loss);
          result.state.samples_seen += static_cast<long long>(data.items.size());
          break;
        }
        case Algorithm::Simclr: {
          RandomStream batch_rng(config.seed, Lane::Batch,
                                 static_cast<std::uint64_t>(it1), 0);
          const auto bases = draw_without_replacement(data.num_bases(), b, batch_rng);
          const auto batch = build_batch_views(data, bases, it1, views, batch_rng);
          std::vector<PosPair> pairs;
          std::vector<std::vector<Item>> negs;
          for (int j = 0; j < 2 * b; ++j) {
            pairs.push_back({batch[j], batch[sibling_index(j, b)]});
            std::vector<Item> nj;
            for (int q = 0; q < 2 * b; ++q) {
              if (batch[q].base_id != batch[j].base_id) nj.push_back(batch[q]);
            }
            negs.push_back(std::move(nj));
          }
          estimate = infonce_grad(pairs, negs, result.state.params, spec, loss);
          result.state.samples_seen += 2 * b;
          break;
        }
        case Algorithm::Emc2: {
          RandomStream batch_rng(config.seed, Lane::Batch,
                                 static_cast<std::uint64_t>(it1), 0);
          MiniBatchSample sample;
          if (config.in_batch()) {
            const auto bases = draw_without_replacement(data.num_bases(), b, batch_rng);
            const auto batch = build_batch_views(data, bases, it1, views, batch_rng);
            const int P = config.effective_P(b);
            std::function<Item(int)> resolve;
            if (views) {
              resolve = [&](int s) { return views(it1, s, 0); };
            } else {
              resolve = [&](int s) { return data.items[s]; };
            }
            const auto mh =
                in_batch_mh(batch, result.state.params, spec, loss, result.state.chains,
                            config.seed, it1, P, views != nullptr, resolve);
            for (int j = 0; j < 2 * b; ++j) {
              sample.push_back({batch[j], batch[sibling_index(j, b)], mh.retained[j]});
            }
            result.state.samples_seen += 2 * b;
          } else {
            const int B = config.batch_size;
            const int R = config.effective_R(B);
            const int P = config.effective_P(B);
            const auto picks = draw_without_replacement(data.num_anchors(), B, batch_rng);
            EncodedTable table(data, result.state.params, spec);
            for (int k : picks) {
              RandomStream rng(config.seed, Lane::ChainStep,
                               static_cast<std::uint64_t>(it1),
                               static_cast<std::uint64_t>(k));
              const auto kept_ids =
                  run_chain_segment(k, result.state.chains, result.state.params, spec,
                                    loss, data, R, P, rng, &table);
              result.state.chains.iteration_touched[k] = it1;
              SampleEntry entry{data.anchor_item(k), data.positive_item(k), {}};
              for (int id : kept_ids) entry.retained.push_back(data.items[id]);
              sample.push_back(std::move(entry));
            }
            result.state.samples_seen += static_cast<long long>(B) * (2 + R);
          }
          estimate = emc2_gradient_estimate(sample, result.state.params, spec, loss);
          break;
        }
      }
    } catch (const NumericError& e) {
      diverged_row(e.what());
      break;
    }

    if (!estimate.all_finite()) {
      diverged_row("non-finite gradient estimate at iteration " + std::to_string(t));
      break;
    }
    const double gamma_t = config.step_size();
    if (config.optimizer == OptimizerKind::Adam) {
      adam_update(result.state.adam, result.state.params, estimate, gamma_t,
                  config.adam_beta1, config.adam_beta2, config.adam_eps);
    } else {
      sgd_update(result.state.params, estimate, gamma_t);
    }
    result.state.iteration += 1;
    if (!result.state.params.all_finite()) {
      diverged_row("non-finite parameters at iteration " + std::to_string(t + 1));
      break;
    }

    if (want_evals && (result.state.iteration % config.eval_every == 0 ||
                       result.state.iteration == T)) {
      try {
        eval_row();
      } catch (const NumericError& e) {
        diverged_row(e.what());
        break;
      }
    }
  }
  return result;
}

}  // namespace emc2
