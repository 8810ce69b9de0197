#include <doctest.h>

#include <cmath>
#include <vector>

#include "emc2/rng.hpp"

using namespace emc2;

TEST_CASE("identical stream ids reproduce identical draws") {
  RandomStream a(42, Lane::ChainStep, 3, 7);
  RandomStream b(42, Lane::ChainStep, 3, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct ids give distinct sequences") {
  RandomStream a(42, Lane::ChainStep, 3, 7);
  RandomStream b(42, Lane::ChainStep, 3, 8);
  RandomStream c(42, Lane::ChainInit, 3, 7);
  RandomStream d(43, Lane::ChainStep, 3, 7);
  int equal_ab = 0, equal_ac = 0, equal_ad = 0;
  for (int i = 0; i < 64; ++i) {
    const auto va = a.next_u64();
    if (va == b.next_u64()) ++equal_ab;
    if (va == c.next_u64()) ++equal_ac;
    if (va == d.next_u64()) ++equal_ad;
  }
  CHECK(equal_ab == 0);
  CHECK(equal_ac == 0);
  CHECK(equal_ad == 0);
}

TEST_CASE("skip advances the counter exactly like a draw") {
  RandomStream a(1, Lane::ChainStep, 0, 0);
  RandomStream b(1, Lane::ChainStep, 0, 0);
  (void)a.next_u64();
  b.skip();
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform_index stays in range and is roughly uniform") {
  RandomStream rng(7, Lane::Probe, 0, 0);
  const int n = 16;
  std::vector<int> counts(n, 0);
  const int draws = 160000;
  for (int i = 0; i < draws; ++i) {
    const auto idx = rng.uniform_index(n);
    REQUIRE(idx < static_cast<std::uint64_t>(n));
    counts[idx]++;
  }
  // chi-square against uniform, 15 dof; 37.7 is the 0.001 quantile
  const double expected = static_cast<double>(draws) / n;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 37.7);
}

TEST_CASE("next_double lies in [0,1) and has sane mean") {
  RandomStream rng(9, Lane::Probe, 1, 0);
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double u = rng.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / draws - 0.5) < 0.01);
}

TEST_CASE("normal draws have unit variance") {
  RandomStream rng(11, Lane::Probe, 2, 0);
  double sum = 0.0, sq = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double z = rng.next_normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / draws) < 0.02);
  CHECK(std::abs(sq / draws - 1.0) < 0.03);
}
