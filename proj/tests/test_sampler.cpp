#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "emc2/diagnostics.hpp"
#include "emc2/errors.hpp"
#include "emc2/sampler.hpp"
#include "test_util.hpp"

using namespace emc2;
using namespace emc2::testutil;

TEST_CASE("acceptance ratio closed forms") {
  auto inst = table_instance(3, 2, 4, 2.0, 12);
  const auto& x = inst.data.anchor_item(0);
  const auto& z = inst.data.items[inst.data.neg_lists[0][0]];

  SUBCASE("identical states give exactly one") {
    CHECK(mh_accept_ratio(x, z, z, inst.params, inst.spec, inst.loss) == 1.0);
  }
  SUBCASE("known similarity gap") {
    // craft rows with sims 0.5 and 0.3 against the anchor
    EncoderSpec spec;
    spec.kind = EncoderKind::EmbeddingTable;
    spec.feature_dim = 2;
    spec.normalize = false;
    spec.item_count = 3;
    ParamVector params({1, 0, 0.5, 1, 0.3, 2}, param_layout(spec));
    Item xi{0, 0, {}}, znew{1, 1, {}}, zold{2, 2, {}};
    const double q = mh_accept_ratio(xi, znew, zold, params, spec, {2.0});
    CHECK(q == doctest::Approx(1.4918247).epsilon(1e-6));
  }
  SUBCASE("tiny beta accepts everything") {
    LossParams beta0{1e-300};
    const auto& z2 = inst.data.items[inst.data.neg_lists[0][1]];
    CHECK(mh_accept_ratio(x, z2, z, inst.params, inst.spec, beta0) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("proposals with higher similarity are always accepted") {
  auto inst = table_instance(4, 2, 4, 3.0, 77);
  EncodedTable table(inst.data, inst.params, inst.spec);
  ChainTable chain = init_chain_table(inst.data, 7);
  for (int k = 0; k < inst.data.num_anchors(); ++k) {
    RandomStream rng(7, Lane::ChainStep, 1, static_cast<std::uint64_t>(k));
    for (int step = 0; step < 50; ++step) {
      const int before = chain.states[k];
      const double s_before = table.sim(inst.data.anchors[k], before);
      const int after = mh_step(k, chain, inst.params, inst.spec, inst.loss,
                                inst.data, rng, &table);
      const double s_after = table.sim(inst.data.anchors[k], after);
      // a rejected move can only happen toward lower similarity
      if (after == before) continue;
      if (s_after < s_before) continue;  // accepted downhill by chance
      CHECK(s_after >= s_before - 1e-15);
    }
  }
}

TEST_CASE("beta = 0 limit walks uniformly") {
  auto inst = table_instance(3, 2, 4, 1.0, 5);
  inst.loss.beta = 1e-300;  // accept everything
  EncodedTable table(inst.data, inst.params, inst.spec);
  ChainTable chain = init_chain_table(inst.data, 3);
  RandomStream rng(3, Lane::ChainStep, 1, 0);
  std::map<int, int> counts;
  const int steps = 100000;
  for (int i = 0; i < steps; ++i) {
    counts[mh_step(0, chain, inst.params, inst.spec, inst.loss, inst.data, rng,
                   &table)]++;
  }
  const auto& negs = inst.data.neg_lists[0];
  double tv = 0.0;
  for (int id : negs) {
    tv += std::abs(static_cast<double>(counts[id]) / steps - 1.0 / negs.size());
  }
  CHECK(0.5 * tv < 0.02);
}

TEST_CASE("chain visits match the exact softmax distribution") {
  // m_neg = 16, fixed theta: empirical distribution of 1e5 post-burn-in steps
  auto inst = table_instance(9, 2, 16, 2.0, 2024);
  REQUIRE(inst.data.m_neg == 16);
  const auto pi = softmax_neg_dist(inst.data, 0, inst.params, inst.spec, inst.loss);
  EncodedTable table(inst.data, inst.params, inst.spec);
  ChainTable chain = init_chain_table(inst.data, 11);
  RandomStream rng(11, Lane::ChainStep, 1, 0);
  for (int i = 0; i < 2000; ++i) {
    (void)mh_step(0, chain, inst.params, inst.spec, inst.loss, inst.data, rng, &table);
  }
  std::map<int, int> counts;
  const int steps = 100000;
  for (int i = 0; i < steps; ++i) {
    counts[mh_step(0, chain, inst.params, inst.spec, inst.loss, inst.data, rng,
                   &table)]++;
  }
  double tv = 0.0;
  const auto& negs = inst.data.neg_lists[0];
  for (std::size_t j = 0; j < negs.size(); ++j) {
    tv += std::abs(static_cast<double>(counts[negs[j]]) / steps - pi[j]);
  }
  CHECK(0.5 * tv < 0.02);
}

TEST_CASE("chain states remain members of the negative set") {
  auto inst = table_instance(4, 2, 3, 2.5, 99);
  ChainTable chain = init_chain_table(inst.data, 4);
  for (int k = 0; k < inst.data.num_anchors(); ++k) {
    RandomStream rng(4, Lane::ChainStep, 1, static_cast<std::uint64_t>(k));
    for (int i = 0; i < 200; ++i) {
      const int s = mh_step(k, chain, inst.params, inst.spec, inst.loss, inst.data, rng);
      const auto& negs = inst.data.neg_lists[k];
      CHECK(std::find(negs.begin(), negs.end(), s) != negs.end());
    }
  }
}

TEST_CASE("run_chain_segment retains the tail and persists the final state") {
  auto inst = table_instance(4, 2, 4, 1.5, 13);

  SUBCASE("R = 1, P = 0") {
    ChainTable chain = init_chain_table(inst.data, 8);
    RandomStream rng(8, Lane::ChainStep, 1, 2);
    const auto kept = run_chain_segment(2, chain, inst.params, inst.spec, inst.loss,
                                        inst.data, 1, 0, rng);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == chain.states[2]);
  }
  SUBCASE("R = 4, P = 3") {
    ChainTable chain = init_chain_table(inst.data, 8);
    RandomStream rng(8, Lane::ChainStep, 1, 2);
    const auto kept = run_chain_segment(2, chain, inst.params, inst.spec, inst.loss,
                                        inst.data, 4, 3, rng);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == chain.states[2]);
  }
  SUBCASE("seeded segment matches an independently coded trace") {
    ChainTable chain = init_chain_table(inst.data, 8);
    const int before = chain.states[1];
    RandomStream rng(8, Lane::ChainStep, 5, 1);
    const auto kept = run_chain_segment(1, chain, inst.params, inst.spec, inst.loss,
                                        inst.data, 8, 4, rng);
    REQUIRE(kept.size() == 4);

    // independent trace with the same stream id
    EncodedTable table(inst.data, inst.params, inst.spec);
    RandomStream rng2(8, Lane::ChainStep, 5, 1);
    int state = before;
    std::vector<int> trace;
    const auto& negs = inst.data.neg_lists[1];
    for (int r = 0; r < 8; ++r) {
      const int prop = negs[rng2.uniform_index(negs.size())];
      const double q = std::exp(inst.loss.beta * (table.sim(inst.data.anchors[1], prop) -
                                                  table.sim(inst.data.anchors[1], state)));
      if (q >= 1.0) {
        rng2.skip();
        state = prop;
      } else if (rng2.next_double() < q) {
        state = prop;
      }
      if (r >= 4) trace.push_back(state);
    }
    CHECK(trace == kept);
    CHECK(chain.states[1] == state);
  }
  SUBCASE("P >= R is a configuration error") {
    ChainTable chain = init_chain_table(inst.data, 8);
    RandomStream rng(8, Lane::ChainStep, 1, 0);
    CHECK_THROWS_AS((void)run_chain_segment(0, chain, inst.params, inst.spec, inst.loss,
                                            inst.data, 3, 3, rng),
                    ConfigError);
  }
}

TEST_CASE("detailed balance holds for the exact kernel") {
  for (int seed = 0; seed < 5; ++seed) {
    auto inst = table_instance(4, 2, 4, 2.0, 3000 + seed);
    for (int k = 0; k < inst.data.num_anchors(); k += 2) {
      const auto kernel =
          diag::build_exact_kernel(inst.data, k, inst.params, inst.spec, inst.loss);
      const auto pi = softmax_neg_dist(inst.data, k, inst.params, inst.spec, inst.loss);
      for (int a = 0; a < kernel.n; ++a) {
        for (int b = 0; b < kernel.n; ++b) {
          CHECK(std::abs(pi[a] * kernel.at(b, a) - pi[b] * kernel.at(a, b)) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("minimum acceptance ratio respects the analytic floor") {
  for (int seed = 0; seed < 10; ++seed) {
    auto inst = table_instance(4, 2, 4, 1.0, 4000 + seed);
    const auto report =
        diag::min_acceptance_check(inst.data, inst.params, inst.spec, inst.loss);
    CHECK(report.pass);
    CHECK(report.measured_min_q >= report.bound - 1e-15);
  }
}

TEST_CASE("identical stream ids reproduce identical retained samples") {
  auto inst = table_instance(5, 2, 4, 2.0, 21);
  ChainTable c1 = init_chain_table(inst.data, 6);
  ChainTable c2 = init_chain_table(inst.data, 6);
  CHECK(c1.states == c2.states);
  for (int k : {0, 3, 7}) {
    RandomStream r1(6, Lane::ChainStep, 9, static_cast<std::uint64_t>(k));
    RandomStream r2(6, Lane::ChainStep, 9, static_cast<std::uint64_t>(k));
    const auto kept1 = run_chain_segment(k, c1, inst.params, inst.spec, inst.loss,
                                         inst.data, 6, 2, r1);
    const auto kept2 = run_chain_segment(k, c2, inst.params, inst.spec, inst.loss,
                                         inst.data, 6, 2, r2);
    CHECK(kept1 == kept2);
  }
  CHECK(c1.states == c2.states);
}

TEST_CASE("in-batch sampling: proposal set arithmetic at b = 2") {
  auto inst = table_instance(4, 2, 4, 1.0, 42);
  ChainTable chain = init_base_chain_table(inst.data, 42, false);
  // batch: both views of bases 0 and 1
  std::vector<Item> batch = {inst.data.items[0], inst.data.items[2],
                             inst.data.items[1], inst.data.items[3]};
  auto resolve = [&](int s) { return inst.data.items[s]; };
  const auto out = in_batch_mh(batch, inst.params, inst.spec, inst.loss, chain, 42, 1,
                               /*P=*/1, false, resolve);
  REQUIRE(out.retained.size() == 4);
  // R = 2b - 2 = 2 steps, P = 1 -> one retained sample per anchor view,
  // drawn from the two views of the other base (or the carried-over state)
  for (int j = 0; j < 4; ++j) {
    CHECK(out.retained[j].size() == 1);
    CHECK(out.retained[j][0].base_id != batch[j].base_id);
  }
}

TEST_CASE("in-batch sampling at beta ~ 0 is uniform over the eligible items") {
  auto inst = table_instance(4, 2, 4, 1.0, 314);
  inst.loss.beta = 1e-300;
  // chi-square over the 6 eligible in-batch items for one anchor, many iterations
  std::vector<Item> batch;
  for (int b = 0; b < 4; ++b) batch.push_back(inst.data.items[inst.data.base_views[b][0]]);
  for (int b = 0; b < 4; ++b) batch.push_back(inst.data.items[inst.data.base_views[b][1]]);
  auto resolve = [&](int s) { return inst.data.items[s]; };

  std::map<int, int> counts;
  int total = 0;
  ChainTable chain = init_base_chain_table(inst.data, 314, false);
  const int iters = 20000;
  for (int it = 1; it <= iters; ++it) {
    const auto out = in_batch_mh(batch, inst.params, inst.spec, inst.loss, chain, 314,
                                 it, /*P=*/5, false, resolve);
    counts[out.retained[0][0].id]++;
    ++total;
  }
  // eligible items for anchor 0 (base 0): the 6 views of bases 1..3
  std::vector<int> eligible;
  for (const auto& it : batch) {
    if (it.base_id != batch[0].base_id) eligible.push_back(it.id);
  }
  REQUIRE(eligible.size() == 6);
  const double expected = static_cast<double>(total) / 6.0;
  double chi2 = 0.0;
  for (int id : eligible) {
    const double diff = counts[id] - expected;
    chi2 += diff * diff / expected;
  }
  // 5 dof, 0.01 significance -> 15.09
  CHECK(chi2 < 15.09);
}

TEST_CASE("in-batch sampling matches a reference trace and is deterministic") {
  auto inst = table_instance(5, 2, 4, 2.0, 55);
  std::vector<Item> batch;
  for (int b = 0; b < 3; ++b) batch.push_back(inst.data.items[inst.data.base_views[b][0]]);
  for (int b = 0; b < 3; ++b) batch.push_back(inst.data.items[inst.data.base_views[b][1]]);
  auto resolve = [&](int s) { return inst.data.items[s]; };

  ChainTable c1 = init_base_chain_table(inst.data, 55, false);
  ChainTable c2 = init_base_chain_table(inst.data, 55, false);
  const auto o1 = in_batch_mh(batch, inst.params, inst.spec, inst.loss, c1, 55, 3, 2,
                              false, resolve);
  const auto o2 = in_batch_mh(batch, inst.params, inst.spec, inst.loss, c2, 55, 3, 2,
                              false, resolve);
  REQUIRE(o1.retained.size() == o2.retained.size());
  for (std::size_t j = 0; j < o1.retained.size(); ++j) {
    REQUIRE(o1.retained[j].size() == o2.retained[j].size());
    for (std::size_t r = 0; r < o1.retained[j].size(); ++r) {
      CHECK(o1.retained[j][r].id == o2.retained[j][r].id);
    }
  }
  CHECK(c1.states == c2.states);
  // final states live outside the anchor's own base
  for (int b = 0; b < 3; ++b) {
    CHECK(inst.data.items[c1.states[b]].base_id != b);
  }
}

TEST_CASE("in-batch sampling input validation") {
  auto inst = table_instance(3, 2, 3, 1.0, 8);
  ChainTable chain = init_base_chain_table(inst.data, 8, false);
  auto resolve = [&](int s) { return inst.data.items[s]; };
  std::vector<Item> two = {inst.data.items[0], inst.data.items[1]};  // b < 2
  CHECK_THROWS_AS((void)in_batch_mh(two, inst.params, inst.spec, inst.loss, chain, 8, 1,
                                    0, false, resolve),
                  ConfigError);
  std::vector<Item> batch = {inst.data.items[0], inst.data.items[2],
                             inst.data.items[1], inst.data.items[3]};
  CHECK_THROWS_AS((void)in_batch_mh(batch, inst.params, inst.spec, inst.loss, chain, 8,
                                    1, /*P=*/2, false, resolve),
                  ConfigError);  // P >= 2b-2
}
