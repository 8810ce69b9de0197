// Command-line front end: dataset synthesis, training runs, diagnostics
// reports, and run-log reporting.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emc2/diagnostics.hpp"
#include "emc2/errors.hpp"
#include "emc2/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace emc2;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "seed override")
      ->each([&](const std::string&) { opts.seed_set = true; });
}

harness::ExperimentConfig load_or_default(const CommonOpts& opts, bool preset_fig7) {
  harness::ExperimentConfig cfg =
      preset_fig7 ? harness::fig7_analog_config()
                  : (opts.config_path.empty() ? harness::ExperimentConfig{}
                                              : harness::load_config(opts.config_path));
  if (!opts.config_path.empty() && preset_fig7) {
    throw ConfigError("pass either --config or --preset, not both");
  }
  return cfg;
}

void write_report_json(const json& report, const std::string& out_dir,
                       const std::string& name) {
  fs::create_directories(out_dir);
  const auto path = fs::path(out_dir) / name;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report '" + path.string() + "'");
  out << report.dump(2) << "\n";
  std::cout << "wrote " << path.string() << "\n";
}

// Small seeded instance shared by the diagnostics subcommands when no config
// is given: embedding-table views on the sphere, all-but-self negatives.
harness::ExperimentConfig default_diag_config() {
  harness::ExperimentConfig cfg;
  cfg.dataset.m = 9;
  cfg.dataset.clusters = 3;
  cfg.dataset.input_dim = 8;
  cfg.dataset.noise_sigma = 0.25;
  cfg.dataset.augmentations_per_item = 1;
  cfg.dataset.seed = 11;
  cfg.encoder.kind = EncoderKind::EmbeddingTable;
  cfg.encoder.feature_dim = 8;
  cfg.encoder.normalize = true;
  cfg.train.beta = 1.0;
  return cfg;
}

struct DiagInstance {
  Dataset data;
  EncoderSpec spec;
  ParamVector params;
  LossParams loss;
};

DiagInstance build_diag_instance(const harness::ExperimentConfig& cfg) {
  DiagInstance inst;
  auto synth = harness::synth_dataset(cfg.dataset);
  inst.data = std::move(synth.data);
  inst.spec = cfg.encoder;
  if (inst.spec.kind == EncoderKind::EmbeddingTable) {
    inst.spec.item_count = static_cast<int>(inst.data.items.size());
  } else if (inst.spec.input_dim == 0) {
    inst.spec.input_dim = cfg.dataset.input_dim;
  }
  inst.spec.validate();
  inst.params = init_params(inst.spec, cfg.train.seed);
  inst.loss.beta = cfg.train.beta;
  return inst;
}

int cmd_synth_data(const CommonOpts& opts) {
  harness::ExperimentConfig cfg = load_or_default(opts, false);
  if (opts.seed_set) cfg.dataset.seed = opts.seed;
  cfg.dataset.validate();
  if (cfg.dataset.infinite()) {
    throw ConfigError("synth-data exports precomputed views; use a finite "
                      "augmentations_per_item");
  }
  auto synth = harness::synth_dataset(cfg.dataset);
  fs::create_directories(opts.out_dir);
  const auto path = fs::path(opts.out_dir) / "dataset.csv";
  harness::write_dataset_csv(synth.data, path.string());
  std::cout << "wrote " << path.string() << " (" << synth.data.items.size()
            << " views, m_neg=" << synth.data.m_neg << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& algorithm,
              const std::string& resume, bool preset_fig7) {
  harness::ExperimentConfig cfg = load_or_default(opts, preset_fig7);
  if (!algorithm.empty()) {
    if (algorithm == "emc2") cfg.train.algorithm = Algorithm::Emc2;
    else if (algorithm == "simclr") cfg.train.algorithm = Algorithm::Simclr;
    else if (algorithm == "exact-gd") cfg.train.algorithm = Algorithm::ExactGd;
    else throw ConfigError("unknown algorithm '" + algorithm + "'");
  }
  if (opts.seed_set) cfg.train.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;

  const auto result = harness::run_experiment(cfg, resume);
  std::cout << "algorithm=" << harness::algorithm_name(cfg.train.algorithm)
            << " iterations=" << result.state.iteration
            << " samples_seen=" << result.state.samples_seen << "\n";
  for (auto it = result.record.rows.rbegin(); it != result.record.rows.rend(); ++it) {
    if (it->loss.has_value()) {
      std::cout << "final loss=" << harness::format_double(*it->loss)
                << " grad_sq_norm=" << harness::format_double(*it->grad_sq_norm) << "\n";
      break;
    }
  }
  if (result.diverged) {
    std::cerr << "diverged: " << result.message << "\n";
  }
  std::cout << "run log: " << result.run_log_path << "\n";
  return result.exit_status;
}

int cmd_diag_mixing(const CommonOpts& opts, int anchor, int max_steps, int replicas) {
  harness::ExperimentConfig cfg =
      opts.config_path.empty() ? default_diag_config() : harness::load_config(opts.config_path);
  if (opts.seed_set) cfg.train.seed = opts.seed;
  DiagInstance inst = build_diag_instance(cfg);

  const auto curve = diag::empirical_mixing_curve(inst.data, anchor, inst.params,
                                                  inst.spec, inst.loss, max_steps,
                                                  replicas, cfg.train.seed);
  bool pass = true;
  double worst_margin = 1.0;
  json rows = json::array();
  for (const auto& row : curve.rows) {
    rows.push_back({{"tau", row.tau}, {"tv", row.tv}, {"bound", row.bound}});
    if (curve.exact && row.tv > row.bound + 1e-12) pass = false;
    worst_margin = std::min(worst_margin, row.bound - row.tv);
  }
  json report;
  report["name"] = "mixing-curve";
  report["inputs"] = {{"anchor", anchor},
                      {"m_neg", inst.data.m_neg},
                      {"beta", inst.loss.beta},
                      {"max_steps", max_steps},
                      {"mode", curve.exact ? "exact" : "sampled"}};
  report["measured"] = rows;
  report["bound"] = "single-chain rate^tau";
  report["pass"] = pass;
  write_report_json(report, opts.out_dir, "mixing.json");
  std::cout << (pass ? "PASS" : "FAIL") << " worst margin " << worst_margin << "\n";
  return pass ? 0 : 1;
}

int cmd_diag_kernel(const CommonOpts& opts, int probes, int R) {
  harness::ExperimentConfig cfg =
      opts.config_path.empty() ? default_diag_config() : harness::load_config(opts.config_path);
  if (opts.seed_set) cfg.train.seed = opts.seed;
  DiagInstance inst = build_diag_instance(cfg);

  double max_col_err = 0.0, max_db_err = 0.0, max_stat_err = 0.0;
  for (int k = 0; k < inst.data.num_anchors(); ++k) {
    const auto kernel = diag::build_exact_kernel(inst.data, k, inst.params, inst.spec,
                                                 inst.loss);
    const auto pi = softmax_neg_dist(inst.data, k, inst.params, inst.spec, inst.loss);
    const int n = kernel.n;
    for (int from = 0; from < n; ++from) {
      max_col_err = std::max(max_col_err, std::abs(kernel.column_sum(from) - 1.0));
    }
    for (int a = 0; a < n; ++a) {
      for (int bidx = 0; bidx < n; ++bidx) {
        max_db_err = std::max(max_db_err, std::abs(pi[a] * kernel.at(bidx, a) -
                                                   pi[bidx] * kernel.at(a, bidx)));
      }
      double kp = 0.0;
      for (int from = 0; from < n; ++from) kp += kernel.at(a, from) * pi[from];
      max_stat_err = std::max(max_stat_err, std::abs(kp - pi[a]));
    }
  }

  // Perturbation dominance probes against the R-step bound.
  const auto consts = diag::estimate_model_constants(inst.data, inst.params, inst.spec,
                                                     inst.loss, 2000, 1e-3,
                                                     cfg.train.seed + 1);
  const double lp = 1.5 * consts.L_P;
  RandomStream rng(cfg.train.seed, Lane::Probe, 99, 0);
  bool dominated = true;
  double worst_ratio = 0.0;
  for (int i = 0; i < probes; ++i) {
    ParamVector theta2 = inst.params;
    std::vector<double> dir(theta2.size());
    double n2 = 0.0;
    for (auto& v : dir) {
      v = rng.next_normal();
      n2 += v * v;
    }
    const double scale = 1e-3 / std::sqrt(n2);
    for (std::size_t q = 0; q < dir.size(); ++q) theta2[q] += dir[q] * scale;
    const auto probe = diag::kernel_perturbation_probe(
        inst.data, static_cast<int>(rng.uniform_index(inst.data.num_anchors())),
        inst.params, theta2, inst.spec, inst.loss, R, lp);
    if (probe.measured_max_diff > probe.bound) dominated = false;
    if (probe.bound > 0) {
      worst_ratio = std::max(worst_ratio, probe.measured_max_diff / probe.bound);
    }
  }

  const bool pass = max_col_err < 1e-12 && max_db_err < 1e-12 &&
                    max_stat_err < 1e-10 && dominated;
  json report;
  report["name"] = "exact-kernel";
  report["inputs"] = {{"m_neg", inst.data.m_neg},
                      {"beta", inst.loss.beta},
                      {"anchors", inst.data.num_anchors()},
                      {"perturbation_probes", probes},
                      {"R", R},
                      {"L_P_estimate_x1.5", lp}};
  report["measured"] = {{"max_column_sum_error", max_col_err},
                        {"max_detailed_balance_error", max_db_err},
                        {"max_stationarity_error", max_stat_err},
                        {"worst_perturbation_ratio", worst_ratio}};
  report["bound"] = {{"column_sum", 1e-12},
                     {"detailed_balance", 1e-12},
                     {"stationarity", 1e-10},
                     {"perturbation", "2(2^R-1) L_P exp(2c^2 beta) beta ||dtheta||"}};
  report["pass"] = pass;
  write_report_json(report, opts.out_dir, "kernel.json");
  std::cout << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

int cmd_diag_bias(const CommonOpts& opts, int estimates, bool oracle, int B, int R,
                  int P) {
  harness::ExperimentConfig cfg =
      opts.config_path.empty() ? default_diag_config() : harness::load_config(opts.config_path);
  if (opts.seed_set) cfg.train.seed = opts.seed;
  DiagInstance inst = build_diag_instance(cfg);
  if (B <= 0) B = std::min(4, inst.data.num_anchors());
  const auto report_data = diag::grad_bias_estimate(
      inst.data, inst.params, inst.spec, inst.loss, B, R, P, estimates, cfg.train.seed,
      oracle ? diag::NegSource::ExactSoftmax : diag::NegSource::Chain);

  json report;
  report["name"] = oracle ? "grad-bias-oracle" : "grad-bias-chain";
  report["inputs"] = {{"B", B}, {"R", R}, {"P", P}, {"estimates", estimates},
                      {"beta", inst.loss.beta}};
  report["measured"] = {{"bias_norm", report_data.bias_norm},
                        {"std_error", report_data.std_error}};
  report["bound"] = "3 std errors when sampling from the stationary distribution";
  report["pass"] = oracle ? report_data.bias_norm <= 3.0 * report_data.std_error : true;
  write_report_json(report, opts.out_dir, oracle ? "bias_oracle.json" : "bias_chain.json");
  std::cout << "bias_norm=" << report_data.bias_norm
            << " std_error=" << report_data.std_error << "\n";
  return 0;
}

int cmd_grad_check(const CommonOpts& opts, int probes) {
  // FD agreement across the three encoder kinds on small seeded instances.
  json cases = json::array();
  bool all_pass = true;
  for (const std::string kind : {"embedding-table", "linear", "mlp2"}) {
    harness::ExperimentConfig cfg = default_diag_config();
    cfg.dataset.m = 5;
    cfg.dataset.augmentations_per_item = 2;
    cfg.dataset.input_dim = 4;
    cfg.encoder.feature_dim = 4;
    cfg.train.beta = 1.5;
    if (kind == "linear") cfg.encoder.kind = EncoderKind::Linear;
    if (kind == "mlp2") {
      cfg.encoder.kind = EncoderKind::Mlp2;
      cfg.encoder.hidden_dim = 6;
    }
    if (opts.seed_set) cfg.train.seed = opts.seed;
    DiagInstance inst = build_diag_instance(cfg);

    double worst = 0.0;
    for (int i = 0; i < probes; ++i) {
      ParamVector params = init_params(inst.spec, cfg.train.seed + 100 + i);
      const auto g = exact_grad(inst.data, params, inst.spec, inst.loss);
      ParamVector fd = params.zeros_like();
      const double h = 1e-5;
      ParamVector theta = params;
      for (std::size_t q = 0; q < theta.size(); ++q) {
        const double saved = theta[q];
        theta[q] = saved + h;
        const double up = global_loss(inst.data, theta, inst.spec, inst.loss);
        theta[q] = saved - h;
        const double dn = global_loss(inst.data, theta, inst.spec, inst.loss);
        theta[q] = saved;
        fd[q] = (up - dn) / (2.0 * h);
      }
      double num = 0.0, den = 0.0;
      for (std::size_t q = 0; q < g.size(); ++q) {
        num = std::max(num, std::abs(g[q] - fd[q]));
        den = std::max(den, std::abs(fd[q]));
      }
      worst = std::max(worst, num / std::max(den, 1e-12));
    }
    const bool pass = worst < 1e-6;
    all_pass = all_pass && pass;
    cases.push_back({{"encoder", kind}, {"max_rel_error", worst}, {"pass", pass}});
  }
  json report;
  report["name"] = "grad-check";
  report["inputs"] = {{"probes_per_encoder", probes}, {"h", 1e-5}};
  report["measured"] = cases;
  report["bound"] = 1e-6;
  report["pass"] = all_pass;
  write_report_json(report, opts.out_dir, "grad_check.json");
  std::cout << (all_pass ? "PASS" : "FAIL") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCMC negative sampling for the global contrastive loss"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, mixing_opts, kernel_opts, bias_opts, grad_opts;

  auto* synth = app.add_subcommand("synth-data", "synthesize a dataset and export CSV");
  add_common(synth, synth_opts);

  auto* train = app.add_subcommand("train", "run a training experiment");
  add_common(train, train_opts);
  std::string algorithm, resume;
  bool preset_fig7 = false;
  train->add_option("--algorithm", algorithm, "emc2 | simclr | exact-gd");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_flag("--preset-fig7", preset_fig7,
                  "use the built-in trajectory-experiment preset");

  auto* mixing = app.add_subcommand("diag-mixing", "mixing curve vs the analytic rate");
  add_common(mixing, mixing_opts);
  int anchor = 0, max_steps = 200, replicas = 10000;
  mixing->add_option("--anchor", anchor, "anchor index");
  mixing->add_option("--max-steps", max_steps, "curve length");
  mixing->add_option("--replicas", replicas, "replicas for sampled mode");

  auto* kernel = app.add_subcommand("diag-kernel", "exact kernel checks and probes");
  add_common(kernel, kernel_opts);
  int kprobes = 20, kR = 2;
  kernel->add_option("--probes", kprobes, "perturbation probes");
  kernel->add_option("--R", kR, "steps for the kernel power");

  auto* bias = app.add_subcommand("diag-bias", "gradient bias estimate at fixed theta");
  add_common(bias, bias_opts);
  int estimates = 20000, bias_B = 0, bias_R = 8, bias_P = 7;
  bool oracle = false;
  bias->add_option("--estimates", estimates, "number of estimates");
  bias->add_option("--B", bias_B, "batch size (0 = min(4, m))");
  bias->add_option("--R", bias_R, "chain steps");
  bias->add_option("--P", bias_P, "burn-in");
  bias->add_flag("--oracle", oracle, "draw negatives from the exact softmax");

  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");
  add_common(grad, grad_opts);
  int gprobes = 5;
  grad->add_option("--probes", gprobes, "probes per encoder kind");

  auto* report = app.add_subcommand("report", "merge run logs into a tidy CSV");
  std::vector<std::string> run_files;
  std::string report_out = "report.csv";
  report->add_option("runs", run_files, "run log files (JSONL)")->required();
  report->add_option("--out", report_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_data(synth_opts);
    if (train->parsed()) return cmd_train(train_opts, algorithm, resume, preset_fig7);
    if (mixing->parsed()) return cmd_diag_mixing(mixing_opts, anchor, max_steps, replicas);
    if (kernel->parsed()) return cmd_diag_kernel(kernel_opts, kprobes, kR);
    if (bias->parsed()) return cmd_diag_bias(bias_opts, estimates, oracle, bias_B, bias_R, bias_P);
    if (grad->parsed()) return cmd_grad_check(grad_opts, gprobes);
    if (report->parsed()) {
      harness::emit_report(run_files, report_out);
      std::cout << "wrote " << report_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
