// Serial reference vs OpenMP kernels: batch gradient and batch decoding.
// Prints wall times and whether the two paths agree bit for bit.

#include <chrono>
#include <cstdio>
#include <cstring>

#include "cvdl/evaluation.hpp"
#include "cvdl/training.hpp"

using namespace cvdl;

namespace {

template <typename Fn>
double best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const int batch = argc > 1 ? std::atoi(argv[1]) : 64;
  const int reps = argc > 2 ? std::atoi(argv[2]) : 5;
  const Dataset ds = generate_dataset(static_cast<std::size_t>(batch), 11, Split::train);
  TrainConfig cfg;
  const auto st = init_state<double>(cfg, ds.vocab.size());
  std::vector<const Sample*> ptrs;
  for (const auto& s : ds.samples) ptrs.push_back(&s);
  const auto views = make_views(ptrs, 5);
  const ObjectiveSpec spec = cfg.objective(ds.vocab.size());

  std::printf("threads=%d batch=%d reps=%d\n", max_threads(), batch, reps);

  std::vector<double> g_serial, g_parallel;
  const double ts = best_of(reps, [&] { objective<double>(st.params, ptrs, &views, spec, &g_serial, ExecPolicy::serial); });
  const double tp = best_of(reps, [&] { objective<double>(st.params, ptrs, &views, spec, &g_parallel, ExecPolicy::parallel); });
  const bool same_grad = g_serial.size() == g_parallel.size() &&
                         std::memcmp(g_serial.data(), g_parallel.data(), g_serial.size() * sizeof(double)) == 0;
  std::printf("objective+gradient  serial %.4fs  parallel %.4fs  speedup %.2fx  identical=%s\n", ts, tp, ts / tp,
              same_grad ? "yes" : "no");

  std::vector<Tokens> d_serial, d_parallel;
  const double ds_t = best_of(reps, [&] { d_serial = decode_all(st.params, ds, kDefaultMaxLen, ExecPolicy::serial); });
  const double dp_t = best_of(reps, [&] { d_parallel = decode_all(st.params, ds, kDefaultMaxLen, ExecPolicy::parallel); });
  std::printf("greedy decode       serial %.4fs  parallel %.4fs  speedup %.2fx  identical=%s\n", ds_t, dp_t,
              ds_t / dp_t, d_serial == d_parallel ? "yes" : "no");
  return same_grad && d_serial == d_parallel ? 0 : 1;
}
