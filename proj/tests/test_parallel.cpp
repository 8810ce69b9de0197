#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>

#include "emc2/loss.hpp"
#include "test_util.hpp"

using namespace emc2;
using namespace emc2::testutil;

TEST_CASE("parallel loss kernel is bitwise equal to the serial reference") {
  for (int seed = 0; seed < 6; ++seed) {
    Instance inst;
    switch (seed % 3) {
      case 0: inst = table_instance(8, 2, 6, 3.0, 6000 + seed); break;
      case 1: inst = linear_instance(8, 2, 5, 4, 3.0, 6000 + seed); break;
      default: inst = mlp2_instance(8, 2, 4, 5, 4, 3.0, 6000 + seed); break;
    }
    const double par = global_loss(inst.data, inst.params, inst.spec, inst.loss);
    const double ser = serial::global_loss(inst.data, inst.params, inst.spec, inst.loss);
    CHECK(par == ser);  // index-ordered reduction in both paths
  }
}

TEST_CASE("parallel gradient kernel matches the serial reference tightly") {
  // the parallel kernel reduces over fixed chunks, so the association differs
  // from the straight serial sweep by rounding only
  for (int seed = 0; seed < 6; ++seed) {
    auto inst = table_instance(70, 2, 6, 3.0, 6100 + seed);  // several chunks
    const auto par = exact_grad(inst.data, inst.params, inst.spec, inst.loss);
    const auto ser = serial::exact_grad(inst.data, inst.params, inst.spec, inst.loss);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < par.size(); ++i) {
      diff = std::max(diff, std::abs(par[i] - ser[i]));
      scale = std::max(scale, std::abs(ser[i]));
    }
    CHECK(diff <= 1e-13 * std::max(scale, 1.0));
  }
}

#ifdef _OPENMP
TEST_CASE("kernel results do not depend on the number of threads") {
  auto inst = table_instance(70, 2, 6, 3.0, 6200);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const double loss1 = global_loss(inst.data, inst.params, inst.spec, inst.loss);
  const auto grad1 = exact_grad(inst.data, inst.params, inst.spec, inst.loss);
  omp_set_num_threads(2);
  const double loss2 = global_loss(inst.data, inst.params, inst.spec, inst.loss);
  const auto grad2 = exact_grad(inst.data, inst.params, inst.spec, inst.loss);
  omp_set_num_threads(4);
  const double loss4 = global_loss(inst.data, inst.params, inst.spec, inst.loss);
  const auto grad4 = exact_grad(inst.data, inst.params, inst.spec, inst.loss);
  omp_set_num_threads(saved);

  CHECK(loss1 == loss2);
  CHECK(loss1 == loss4);
  for (std::size_t i = 0; i < grad1.size(); ++i) {
    CHECK(grad1[i] == grad2[i]);
    CHECK(grad1[i] == grad4[i]);
  }
}
#endif
