#include <doctest.h>

#include <cmath>
#include <vector>

#include "emc2/diagnostics.hpp"
#include "emc2/errors.hpp"
#include "test_util.hpp"

using namespace emc2;
using namespace emc2::testutil;
using namespace emc2::diag;

TEST_CASE("exact kernel: beta = 0 with two states is all 1/2") {
  auto items = make_items(3, 1, 2, 1);
  auto data = build_explicit(std::move(items), {0}, {0}, {{1, 2}});
  EncoderSpec spec;
  spec.kind = EncoderKind::EmbeddingTable;
  spec.feature_dim = 2;
  spec.normalize = true;
  spec.item_count = 3;
  ParamVector params = init_params(spec, 1);
  const auto k = build_exact_kernel(data, 0, params, spec, {0.0});
  REQUIRE(k.n == 2);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) CHECK(k.at(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("exact kernel is column stochastic and stationary at the softmax") {
  for (int seed = 0; seed < 20; ++seed) {
    auto inst = table_instance(5, 2, 4, 2.0, 7000 + seed);  // m_neg = 8
    REQUIRE(inst.data.m_neg == 8);
    const int anchor = seed % inst.data.num_anchors();
    const auto k = build_exact_kernel(inst.data, anchor, inst.params, inst.spec,
                                      inst.loss);
    for (int from = 0; from < k.n; ++from) {
      CHECK(std::abs(k.column_sum(from) - 1.0) < 1e-12);
      for (int to = 0; to < k.n; ++to) {
        CHECK(k.at(to, from) >= 0.0);
        CHECK(k.at(to, from) <= 1.0);
      }
    }
    const auto pi = softmax_neg_dist(inst.data, anchor, inst.params, inst.spec,
                                     inst.loss);
    for (int to = 0; to < k.n; ++to) {
      double kp = 0.0;
      for (int from = 0; from < k.n; ++from) kp += k.at(to, from) * pi[from];
      CHECK(std::abs(kp - pi[to]) < 1e-10);
    }
  }
}

TEST_CASE("kernel guard rejects oversized negative sets") {
  auto inst = table_instance(3, 2, 2, 1.0, 3);
  Dataset big = inst.data;
  big.m_neg = 5000;  // simulate the guard trip
  CHECK_THROWS_AS((void)build_exact_kernel(big, 0, inst.params, inst.spec, inst.loss),
                  SizeError);
}

TEST_CASE("lemma 1 rate bound values") {
  CHECK(lemma1_rate_bound(1, 1, 2, 2, 1, 0) == doctest::Approx(0.875).epsilon(1e-15));
  CHECK(lemma1_rate_bound(1, 1, 2, 2, 1, 0.5) ==
        doctest::Approx(1.0 - 1.0 / (8.0 * std::exp(1.0))).epsilon(1e-7));
  // boundary BR = m * m_neg * exp(2 c^2 beta)
  CHECK(lemma1_rate_bound(4, 1, 2, 2, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS((void)lemma1_rate_bound(10, 1, 2, 2, 0, 0), DomainError);
}

TEST_CASE("lemma 2 lipschitz bound values") {
  CHECK(lemma2_lipschitz_bound(1, 1, 1, 1, 0) == 0.0);
  CHECK(lemma2_lipschitz_bound(2, 1, 1, 0, 1) == doctest::Approx(8.0).epsilon(1e-15));
  for (int r = 1; r < 6; ++r) {
    CHECK(lemma2_lipschitz_bound(r + 1, 2, 0.7, 1, 0.3) ==
          doctest::Approx(2.0 * lemma2_lipschitz_bound(r, 2, 0.7, 1, 0.3)).epsilon(1e-12));
  }
}

TEST_CASE("mixing curve: beta = 0 reaches uniform after one step") {
  auto inst = table_instance(5, 2, 4, 0.0, 41);
  const auto curve = empirical_mixing_curve(inst.data, 0, inst.params, inst.spec,
                                            {0.0}, 5, 0, 41);
  REQUIRE(curve.exact);
  CHECK(curve.rows[1].tv < 1e-14);
}

TEST_CASE("mixing curve: TV at tau = 0 is 1 - min pi") {
  auto inst = table_instance(5, 2, 4, 2.0, 42);
  const auto pi = softmax_neg_dist(inst.data, 1, inst.params, inst.spec, inst.loss);
  const auto curve = empirical_mixing_curve(inst.data, 1, inst.params, inst.spec,
                                            inst.loss, 3, 0, 42);
  double min_pi = pi[0];
  for (double v : pi) min_pi = std::min(min_pi, v);
  CHECK(curve.rows[0].tv == doctest::Approx(1.0 - min_pi).epsilon(1e-12));
  CHECK(curve.rows[0].bound == 1.0);
}

TEST_CASE("measured TV is dominated by the lemma bound in exact mode") {
  for (int seed = 0; seed < 6; ++seed) {
    for (double beta : {0.0, 0.5, 1.0}) {
      auto inst = table_instance(5, 2, 4, beta, 8000 + seed);
      const auto curve = empirical_mixing_curve(inst.data, seed % 5, inst.params,
                                                inst.spec, {beta}, 60, 0, seed);
      REQUIRE(curve.exact);
      for (const auto& row : curve.rows) {
        CHECK(row.tv <= row.bound + 1e-12);
      }
    }
  }
}

TEST_CASE("sampled-mode mixing curve kicks in above the exact guard") {
  // m_neg = 80 > 64 -> replica histograms instead of kernel powers
  auto inst = table_instance(41, 2, 4, 0.5, 43);
  REQUIRE(inst.data.m_neg == 80);
  const auto curve = empirical_mixing_curve(inst.data, 0, inst.params, inst.spec,
                                            inst.loss, 10, 20000, 43);
  CHECK_FALSE(curve.exact);
  REQUIRE(curve.rows.size() == 11);
  const auto pi = softmax_neg_dist(inst.data, 0, inst.params, inst.spec, inst.loss);
  double min_pi = pi[0];
  for (double v : pi) min_pi = std::min(min_pi, v);
  CHECK(curve.rows[0].tv == doctest::Approx(1.0 - min_pi).epsilon(1e-12));
  // by tau = 10 the chain is close to stationary up to histogram noise
  CHECK(curve.rows[10].tv < 0.15);
  CHECK(curve.rows[10].tv < curve.rows[0].tv);

  CHECK_THROWS_AS((void)empirical_mixing_curve(inst.data, 0, inst.params, inst.spec,
                                               inst.loss, 10, 100, 43),
                  ConfigError);
}

TEST_CASE("kernel perturbation probe: identical and beta = 0 cases measure zero") {
  auto inst = table_instance(5, 2, 4, 1.5, 44);
  const auto same = kernel_perturbation_probe(inst.data, 0, inst.params, inst.params,
                                              inst.spec, inst.loss, 2, 1.0);
  CHECK(same.measured_max_diff == 0.0);
  CHECK(same.bound >= 0.0);

  ParamVector other = inst.params;
  other[0] += 1e-3;
  const auto beta0 = kernel_perturbation_probe(inst.data, 0, inst.params, other,
                                               inst.spec, {0.0}, 2, 1.0);
  CHECK(beta0.measured_max_diff == 0.0);
  CHECK(beta0.bound == 0.0);
}

TEST_CASE("measured kernel-power difference obeys the analytic bound") {
  auto inst = table_instance(5, 2, 4, 1.0, 45);
  const auto consts = estimate_model_constants(inst.data, inst.params, inst.spec,
                                               inst.loss, 2000, 1e-3, 45);
  const double lp = 1.5 * consts.L_P;
  RandomStream rng(45, Lane::Probe, 1, 0);
  for (int probe = 0; probe < 30; ++probe) {
    ParamVector theta2 = inst.params;
    std::vector<double> dir(theta2.size());
    double n2 = 0.0;
    for (auto& v : dir) {
      v = rng.next_normal();
      n2 += v * v;
    }
    const double scale = 1e-3 / std::sqrt(n2);
    for (std::size_t i = 0; i < dir.size(); ++i) theta2[i] += dir[i] * scale;
    const int R = 1 + probe % 3;
    const auto res = kernel_perturbation_probe(
        inst.data, probe % inst.data.num_anchors(), inst.params, theta2, inst.spec,
        inst.loss, R, lp);
    CHECK(res.measured_max_diff <= res.bound);
  }
}

TEST_CASE("theory constants assemble the displayed formulas") {
  SUBCASE("sigma = 0 zeroes sigma_bar and the first smoothness constant") {
    const auto tc = theory_constants(2, 2, 4, 8, 1, 0.5, 1.3, 1.1, 0.0);
    CHECK(tc.sigma_bar == 0.0);
    CHECK(tc.L_PH_0 == 0.0);
  }
  SUBCASE("beta = 0 zeroes the derived constants") {
    const auto tc = theory_constants(1, 1, 2, 2, 1, 0.0, 1.0, 1.0, 1.0);
    CHECK(tc.sigma_bar == 0.0);
    CHECK(tc.L_bar_P == 0.0);
    CHECK(tc.L_bar_H == 0.0);
    CHECK(tc.loss_gap_bound == 0.0);
  }
  SUBCASE("seeded values match an independent re-evaluation") {
    const double B = 3, R = 2, m = 5, mn = 9, c = 1, beta = 0.7, lp = 1.9, lh = 0.8,
                 sigma = 1.4;
    const auto tc = theory_constants(B, R, m, mn, c, beta, lp, lh, sigma);
    const double e = std::exp(2 * c * c * beta);
    const double gap = B * R / (2 * m * mn * e);
    CHECK(tc.rho_bar == doctest::Approx(1 - gap).epsilon(1e-12));
    CHECK(tc.sigma_bar == doctest::Approx(2 * beta * sigma).epsilon(1e-12));
    CHECK(tc.L_bar_P == doctest::Approx(std::pow(2, R + 1) * B * lp * e * beta).epsilon(1e-12));
    CHECK(tc.L_bar_H == doctest::Approx(2 * beta * lh).epsilon(1e-12));
    CHECK(tc.L_PH_0 == doctest::Approx(2 * beta * sigma * (1 - gap) / gap).epsilon(1e-12));
    CHECK(tc.L_PH_1 ==
          doctest::Approx(6 * std::pow(2, R + 1) * B * e * beta * beta * sigma * lp /
                              (gap * gap) +
                          2 * beta * lh / gap)
              .epsilon(1e-12));
    CHECK(tc.loss_gap_bound == doctest::Approx(4 * beta).epsilon(1e-12));
  }
}

TEST_CASE("gradient bias vanishes with oracle negatives and with beta = 0 chains") {
  auto inst = table_instance(4, 2, 3, 1.2, 46);
  const auto oracle = grad_bias_estimate(inst.data, inst.params, inst.spec, inst.loss,
                                         2, 3, 2, 3000, 77, NegSource::ExactSoftmax);
  CHECK(oracle.bias_norm <= 4.0 * oracle.std_error);

  const auto beta0 = grad_bias_estimate(inst.data, inst.params, inst.spec, {0.0}, 2, 2,
                                        1, 3000, 78, NegSource::Chain);
  CHECK(beta0.bias_norm <= 4.0 * beta0.std_error);
}

TEST_CASE("long chains drive the bias toward zero") {
  auto inst = table_instance(4, 2, 3, 1.5, 47);
  const auto report = grad_bias_estimate(inst.data, inst.params, inst.spec, inst.loss,
                                         2, 64, 63, 3000, 79, NegSource::Chain);
  CHECK(report.bias_norm <= 4.0 * report.std_error);
}

TEST_CASE("loss range check") {
  SUBCASE("beta -> 0 pins the loss at log m_neg") {
    auto inst = table_instance(4, 2, 4, 0.0, 48);
    const auto report = loss_range_check(inst.data, inst.params, inst.spec, {0.0});
    CHECK(report.pass);
    CHECK(report.loss == doctest::Approx(std::log(inst.data.m_neg)).epsilon(1e-12));
  }
  SUBCASE("identical embeddings sit inside the range") {
    auto inst = table_instance(3, 2, 2, 2.0, 49);
    for (std::size_t i = 0; i < inst.params.size(); i += 2) {
      inst.params[i] = 1.0;
      inst.params[i + 1] = 0.0;
    }
    const auto report = loss_range_check(inst.data, inst.params, inst.spec, inst.loss);
    CHECK(report.pass);
    CHECK(report.loss == doctest::Approx(std::log(inst.data.m_neg)).epsilon(1e-12));
  }
  SUBCASE("100 random thetas all pass") {
    for (int seed = 0; seed < 100; ++seed) {
      auto inst = table_instance(4, 2, 3, 3.0, 9000 + seed);
      CHECK(loss_range_check(inst.data, inst.params, inst.spec, inst.loss).pass);
    }
  }
}

TEST_CASE("minimum acceptance check") {
  SUBCASE("beta = 0 gives measured = bound = 1") {
    auto inst = table_instance(3, 2, 2, 0.0, 50);
    const auto report = min_acceptance_check(inst.data, inst.params, inst.spec, {0.0});
    CHECK(report.measured_min_q == 1.0);
    CHECK(report.bound == 1.0);
    CHECK(report.pass);
  }
  SUBCASE("c = 1, beta = 1 bound is exp(-2)") {
    auto inst = table_instance(3, 2, 2, 1.0, 51);
    const auto report = min_acceptance_check(inst.data, inst.params, inst.spec,
                                             inst.loss);
    CHECK(report.bound == doctest::Approx(0.1353353).epsilon(1e-6));
    CHECK(report.pass);
  }
  SUBCASE("identical embeddings give measured 1") {
    auto inst = table_instance(3, 2, 2, 2.0, 52);
    for (std::size_t i = 0; i < inst.params.size(); i += 2) {
      inst.params[i] = 0.6;
      inst.params[i + 1] = 0.8;
    }
    const auto report = min_acceptance_check(inst.data, inst.params, inst.spec,
                                             inst.loss);
    CHECK(report.measured_min_q == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report.pass);
  }
}

TEST_CASE("model constant estimates are positive and finite") {
  auto inst = mlp2_instance(3, 2, 3, 4, 3, 1.0, 53);
  const auto consts = estimate_model_constants(inst.data, inst.params, inst.spec,
                                               inst.loss, 500, 1e-3, 53);
  CHECK(consts.L_P > 0.0);
  CHECK(consts.L_H > 0.0);
  CHECK(consts.sigma > 0.0);
  CHECK(std::isfinite(consts.L_P + consts.L_H + consts.sigma));
}
