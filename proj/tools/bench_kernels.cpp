// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Times the serial reference kernels against the OpenMP versions on a few
// representative shapes and checks that both produce bitwise-identical output.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "singit/common.hpp"
#include "singit/kernels.hpp"

namespace {

using singit::Rng;
using namespace singit::kernels;

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
  return m;
}

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.uniform(-1.0, 1.0);
  return t;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

template <class F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

int g_failures = 0;

void report(const char* name, double serial_ms, double par_ms, double diff) {
  const bool ok = diff == 0.0;
  if (!ok) ++g_failures;
  std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name,
              serial_ms, par_ms, par_ms > 0.0 ? serial_ms / par_ms : 0.0,
              ok ? "bitwise equal" : "MISMATCH");
}

void bench_matmul(int m, int k, int n, int reps, Rng& rng) {
  const Mat a = random_mat(m, k, rng);
  const Mat b = random_mat(k, n, rng);
  Mat cs, cp;
  const double ts = time_best_of(reps, [&] { serial::matmul(a, b, cs); });
  const double tp = time_best_of(reps, [&] { par::matmul(a, b, cp); });
  char name[64];
  std::snprintf(name, sizeof(name), "matmul %dx%dx%d", m, k, n);
  report(name, ts, tp, max_abs_diff(cs, cp));
}

void bench_conv1d(int c_out, int c_in, int kw, int t, int reps, Rng& rng) {
  const Mat in = random_mat(c_in, t, rng);
  const Tensor w = random_tensor({c_out, c_in, kw}, rng);
  const Tensor bias = random_tensor({c_out}, rng);
  Mat outs, outp;
  const double ts = time_best_of(reps, [&] { serial::conv1d(in, w, bias, outs); });
  const double tp = time_best_of(reps, [&] { par::conv1d(in, w, bias, outp); });
  char name[64];
  std::snprintf(name, sizeof(name), "conv1d %dx%d k%d T%d", c_out, c_in, kw, t);
  report(name, ts, tp, max_abs_diff(outs, outp));
}

void bench_conv1d_grads(int c_out, int c_in, int kw, int t, int reps, Rng& rng) {
  const Mat in = random_mat(c_in, t, rng);
  const Tensor w = random_tensor({c_out, c_in, kw}, rng);
  const Mat gout = random_mat(c_out, t, rng);

  Mat gis, gip;
  const double ts = time_best_of(reps, [&] { serial::conv1d_grad_input(w, gout, gis); });
  const double tp = time_best_of(reps, [&] { par::conv1d_grad_input(w, gout, gip); });
  report("conv1d_grad_input", ts, tp, max_abs_diff(gis, gip));

  Tensor gws({c_out, c_in, kw}), gbs({c_out});
  Tensor gwp({c_out, c_in, kw}), gbp({c_out});
  const double ts2 = time_best_of(reps, [&] {
    gws = Tensor({c_out, c_in, kw});
    gbs = Tensor({c_out});
    serial::conv1d_grad_params(in, gout, gws, gbs);
  });
  const double tp2 = time_best_of(reps, [&] {
    gwp = Tensor({c_out, c_in, kw});
    gbp = Tensor({c_out});
    par::conv1d_grad_params(in, gout, gwp, gbp);
  });
  double diff = 0.0;
  for (std::int64_t i = 0; i < gws.size(); ++i)
    diff = std::max(diff, std::fabs(gws.v[i] - gwp.v[i]));
  for (std::int64_t i = 0; i < gbs.size(); ++i)
    diff = std::max(diff, std::fabs(gbs.v[i] - gbp.v[i]));
  report("conv1d_grad_params", ts2, tp2, diff);
}

void bench_reductions(int rows, int cols, int reps, Rng& rng) {
  const Mat a = random_mat(rows, cols, rng);
  const Mat b = random_mat(rows, cols, rng);
  double rs = 0.0, rp = 0.0;
  const double ts = time_best_of(reps, [&] { rs = serial::sum_sq_diff(a, b); });
  const double tp = time_best_of(reps, [&] { rp = par::sum_sq_diff(a, b); });
  report("sum_sq_diff", ts, tp, std::fabs(rs - rp));
  const double ts2 = time_best_of(reps, [&] { rs = serial::sum_abs_diff(a, b); });
  const double tp2 = time_best_of(reps, [&] { rp = par::sum_abs_diff(a, b); });
  report("sum_abs_diff", ts2, tp2, std::fabs(rs - rp));
}

}  // namespace

int main(int argc, char** argv) {
  int scale = 1;
  if (argc > 1) scale = std::max(1, std::atoi(argv[1]));

  set_exec_mode(ExecMode::Parallel);
  std::printf("threads available: %d (pass a scale factor to enlarge shapes)\n\n", max_threads());

  Rng rng(1234);
  const int reps = 3;
  bench_matmul(256 * scale, 512, 128, reps, rng);
  bench_matmul(1024, 256, 64 * scale, reps, rng);
  bench_conv1d(256, 256, 5, 512 * scale, reps, rng);
  bench_conv1d_grads(256, 256, 5, 512 * scale, reps, rng);
  bench_reductions(256, 4096 * scale, reps, rng);

  if (g_failures > 0) {
    std::printf("\n%d kernel(s) disagreed between serial and parallel\n", g_failures);
    return 1;
  }
  std::printf("\nall kernels bitwise equal across modes\n");
  return 0;
}
