// Timing comparison of the OpenMP exact-evaluation kernels against the serial
// reference, plus a consistency check between the two paths.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "emc2/harness.hpp"
#include "emc2/loss.hpp"

using namespace emc2;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(
             Clock::now() - start)
      .count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int bases = 400;
  if (argc > 1) bases = std::stoi(argv[1]);

  harness::DatasetSpec ds;
  ds.m = bases;
  ds.clusters = 16;
  ds.input_dim = 32;
  ds.noise_sigma = 0.1;
  ds.augmentations_per_item = 2;
  ds.seed = 7;
  const auto synth = harness::synth_dataset(ds);

  EncoderSpec spec;
  spec.kind = EncoderKind::EmbeddingTable;
  spec.feature_dim = 32;
  spec.normalize = true;
  spec.item_count = static_cast<int>(synth.data.items.size());
  const ParamVector params = init_params(spec, 7);
  const LossParams loss{5.0};

#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  std::printf("instance: m = %d anchors, m_neg = %d, p = %zu\n",
              synth.data.num_anchors(), synth.data.m_neg, params.size());

  const double t_loss_ser = time_best_of(3, [&] {
    (void)serial::global_loss(synth.data, params, spec, loss);
  });
  const double t_loss_par = time_best_of(3, [&] {
    (void)global_loss(synth.data, params, spec, loss);
  });
  const double t_grad_ser = time_best_of(3, [&] {
    (void)serial::exact_grad(synth.data, params, spec, loss);
  });
  const double t_grad_par = time_best_of(3, [&] {
    (void)exact_grad(synth.data, params, spec, loss);
  });

  std::printf("global_loss  serial %8.2f ms | parallel %8.2f ms | speedup %.2fx\n",
              t_loss_ser, t_loss_par, t_loss_ser / t_loss_par);
  std::printf("exact_grad   serial %8.2f ms | parallel %8.2f ms | speedup %.2fx\n",
              t_grad_ser, t_grad_par, t_grad_ser / t_grad_par);

  const double l_ser = serial::global_loss(synth.data, params, spec, loss);
  const double l_par = global_loss(synth.data, params, spec, loss);
  const auto g_ser = serial::exact_grad(synth.data, params, spec, loss);
  const auto g_par = exact_grad(synth.data, params, spec, loss);
  double gdiff = 0.0;
  for (std::size_t i = 0; i < g_ser.size(); ++i) {
    gdiff = std::max(gdiff, std::abs(g_ser[i] - g_par[i]));
  }
  std::printf("loss diff %.3g | grad max diff %.3g\n", std::abs(l_ser - l_par), gdiff);
  const bool ok = std::abs(l_ser - l_par) == 0.0 && gdiff < 1e-12;
  std::printf("consistency: %s\n", ok ? "OK" : "MISMATCH");
  return ok ? 0 : 1;
}
