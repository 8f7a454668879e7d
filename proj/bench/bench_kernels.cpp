// Serial reference kernels against the OpenMP versions, plus a whole-model
// forward pass in both modes. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "aufa/connectome.hpp"
#include "aufa/kernels.hpp"
#include "aufa/model.hpp"
#include "aufa/rng.hpp"

using namespace aufa;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = filled(n, n, 1), b = filled(n, n, 2);
  Matrix c(n, n);
  kernels::set_serial(false);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void bm_infer(benchmark::State& state) {
  const bool serial = state.range(0) != 0;
  SiteSpec s;
  s.n_subjects_per_class = 16;
  s.n_rois = 32;
  const Dataset ds = synth_multisite(s, s).first;
  EncoderConfig ec;
  ec.d_model = 32;
  ec.ffn_hidden = 64;
  const Model model = init_model(ec, 256, 0);
  kernels::set_serial(serial);
  for (auto _ : state) {
    const Inference r = infer(model, ds);
    benchmark::DoNotOptimize(r.probs.data());
  }
  kernels::set_serial(false);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * ds.size()));
}

}  // namespace

BENCHMARK(bm_gemm<kernels::reference::gemm_nn>)->Name("gemm_nn/reference")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<kernels::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<kernels::reference::gemm_tn>)->Name("gemm_tn/reference")->Arg(128);
BENCHMARK(bm_gemm<kernels::gemm_tn>)->Name("gemm_tn/parallel")->Arg(128);
BENCHMARK(bm_infer)->Name("infer/serial")->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_infer)->Name("infer/parallel")->Arg(0)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
