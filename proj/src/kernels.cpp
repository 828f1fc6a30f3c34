// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/kernels.hpp"

#include <atomic>
#include <cmath>

namespace singit::kernels {

namespace {
std::atomic<ExecMode> g_mode{
#ifdef _OPENMP
    ExecMode::Parallel
#else
    ExecMode::Serial
#endif
};

void size_output(Mat& c, int m, int n) {
  if (c.rows() != m || c.cols() != n) c = Mat(m, n);
}

void check_kernel_odd(int k) {
  if (k < 1 || k % 2 == 0) throw ShapeError("conv1d: kernel length must be odd");
}
}  // namespace

void set_exec_mode(ExecMode m) { g_mode.store(m); }
ExecMode exec_mode() { return g_mode.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// Serial reference kernels. Textbook loops; the accumulation order defined
// here is the contract the parallel variants must reproduce bitwise.
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul: inner dims differ");
  size_output(c, m, n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * b(l, j);
      ci[j] = s;
    }
  }
}

void matmul_tA(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.cols(), k = a.rows(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul_tA: inner dims differ");
  size_output(c, m, n);
  for (int i = 0; i < m; ++i) {
    double* ci = c.row(i);
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a(l, i) * b(l, j);
      ci[j] = s;
    }
  }
}

void matmul_tB(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_tB: inner dims differ");
  size_output(c, m, n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int j = 0; j < n; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out) {
  const int cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
  const int t_len = in.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (in.rows() != cin) throw ShapeError("conv1d: input channels mismatch");
  size_output(out, cout, t_len);
  for (int o = 0; o < cout; ++o) {
    double* orow = out.row(o);
    for (int t = 0; t < t_len; ++t) orow[t] = bias(o);
    for (int i = 0; i < cin; ++i) {
      const double* irow = in.row(i);
      for (int kk = 0; kk < k; ++kk) {
        const double wv = w(o, i, kk);
        const int off = kk - pad;
        const int t0 = std::max(0, -off), t1 = std::min(t_len, t_len - off);
        for (int t = t0; t < t1; ++t) orow[t] += wv * irow[t + off];
      }
    }
  }
}

void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin) {
  const int cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
  const int t_len = gout.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (gout.rows() != cout) throw ShapeError("conv1d_grad_input: gout channels mismatch");
  size_output(gin, cin, t_len);
  for (int i = 0; i < cin; ++i) {
    double* grow = gin.row(i);
    for (int t = 0; t < t_len; ++t) grow[t] = 0.0;
    for (int o = 0; o < cout; ++o) {
      const double* gr = gout.row(o);
      for (int kk = 0; kk < k; ++kk) {
        const double wv = w(o, i, kk);
        const int off = kk - pad;  // gin[t] += w * gout[t - off]
        const int t0 = std::max(0, off), t1 = std::min(t_len, t_len + off);
        for (int t = t0; t < t1; ++t) grow[t] += wv * gr[t - off];
      }
    }
  }
}

void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb) {
  const int cout = gw.shape[0], cin = gw.shape[1], k = gw.shape[2];
  const int t_len = in.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (gout.rows() != cout || gout.cols() != t_len || in.rows() != cin)
    throw ShapeError("conv1d_grad_params: bad shape");
  for (int o = 0; o < cout; ++o) {
    const double* gr = gout.row(o);
    double s = 0.0;
    for (int t = 0; t < t_len; ++t) s += gr[t];
    gb(o) += s;
    for (int i = 0; i < cin; ++i) {
      const double* irow = in.row(i);
      for (int kk = 0; kk < k; ++kk) {
        const int off = kk - pad;
        const int t0 = std::max(0, -off), t1 = std::min(t_len, t_len - off);
        double acc = 0.0;
        for (int t = t0; t < t1; ++t) acc += gr[t] * irow[t + off];
        gw(o, i, kk) += acc;
      }
    }
  }
}

double sum_sq_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw ShapeError("sum_sq_diff: shape mismatch");
  std::vector<double> partial(static_cast<std::size_t>(std::max(a.rows(), 0)), 0.0);
  for (int r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    const double* br = b.row(r);
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) {
      const double d = ar[c] - br[c];
      s += d * d;
    }
    partial[static_cast<std::size_t>(r)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double sum_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw ShapeError("sum_abs_diff: shape mismatch");
  std::vector<double> partial(static_cast<std::size_t>(std::max(a.rows(), 0)), 0.0);
  for (int r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    const double* br = b.row(r);
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) s += std::fabs(ar[c] - br[c]);
    partial[static_cast<std::size_t>(r)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Work is split across independent output rows; per-element
// arithmetic order matches the serial reference exactly.
// ---------------------------------------------------------------------------

namespace par {

void matmul(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul: inner dims differ");
  size_output(c, m, n);
  parallel_for(m, [&](std::int64_t i) {
    const double* ai = a.row(static_cast<int>(i));
    double* ci = c.row(static_cast<int>(i));
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * b(l, j);
      ci[j] = s;
    }
  });
}

void matmul_tA(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.cols(), k = a.rows(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul_tA: inner dims differ");
  size_output(c, m, n);
  parallel_for(m, [&](std::int64_t i) {
    double* ci = c.row(static_cast<int>(i));
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a(l, static_cast<int>(i)) * b(l, j);
      ci[j] = s;
    }
  });
}

void matmul_tB(const Mat& a, const Mat& b, Mat& c) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_tB: inner dims differ");
  size_output(c, m, n);
  parallel_for(m, [&](std::int64_t i) {
    const double* ai = a.row(static_cast<int>(i));
    double* ci = c.row(static_cast<int>(i));
    for (int j = 0; j < n; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  });
}

void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out) {
  const int cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
  const int t_len = in.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (in.rows() != cin) throw ShapeError("conv1d: input channels mismatch");
  size_output(out, cout, t_len);
  parallel_for(cout, [&](std::int64_t oi) {
    const int o = static_cast<int>(oi);
    double* orow = out.row(o);
    for (int t = 0; t < t_len; ++t) orow[t] = bias(o);
    for (int i = 0; i < cin; ++i) {
      const double* irow = in.row(i);
      for (int kk = 0; kk < k; ++kk) {
        const double wv = w(o, i, kk);
        const int off = kk - pad;
        const int t0 = std::max(0, -off), t1 = std::min(t_len, t_len - off);
        for (int t = t0; t < t1; ++t) orow[t] += wv * irow[t + off];
      }
    }
  });
}

void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin) {
  const int cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
  const int t_len = gout.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (gout.rows() != cout) throw ShapeError("conv1d_grad_input: gout channels mismatch");
  size_output(gin, cin, t_len);
  parallel_for(cin, [&](std::int64_t ii) {
    const int i = static_cast<int>(ii);
    double* grow = gin.row(i);
    for (int t = 0; t < t_len; ++t) grow[t] = 0.0;
    for (int o = 0; o < cout; ++o) {
      const double* gr = gout.row(o);
      for (int kk = 0; kk < k; ++kk) {
        const double wv = w(o, i, kk);
        const int off = kk - pad;
        const int t0 = std::max(0, off), t1 = std::min(t_len, t_len + off);
        for (int t = t0; t < t1; ++t) grow[t] += wv * gr[t - off];
      }
    }
  });
}

void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb) {
  const int cout = gw.shape[0], cin = gw.shape[1], k = gw.shape[2];
  const int t_len = in.cols(), pad = k / 2;
  check_kernel_odd(k);
  if (gout.rows() != cout || gout.cols() != t_len || in.rows() != cin)
    throw ShapeError("conv1d_grad_params: bad shape");
  parallel_for(cout, [&](std::int64_t oi) {
    const int o = static_cast<int>(oi);
    const double* gr = gout.row(o);
    double s = 0.0;
    for (int t = 0; t < t_len; ++t) s += gr[t];
    gb(o) += s;
    for (int i = 0; i < cin; ++i) {
      const double* irow = in.row(i);
      for (int kk = 0; kk < k; ++kk) {
        const int off = kk - pad;
        const int t0 = std::max(0, -off), t1 = std::min(t_len, t_len - off);
        double acc = 0.0;
        for (int t = t0; t < t1; ++t) acc += gr[t] * irow[t + off];
        gw(o, i, kk) += acc;
      }
    }
  });
}

double sum_sq_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw ShapeError("sum_sq_diff: shape mismatch");
  std::vector<double> partial(static_cast<std::size_t>(std::max(a.rows(), 0)), 0.0);
  parallel_for(a.rows(), [&](std::int64_t ri) {
    const int r = static_cast<int>(ri);
    const double* ar = a.row(r);
    const double* br = b.row(r);
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) {
      const double d = ar[c] - br[c];
      s += d * d;
    }
    partial[static_cast<std::size_t>(r)] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double sum_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw ShapeError("sum_abs_diff: shape mismatch");
  std::vector<double> partial(static_cast<std::size_t>(std::max(a.rows(), 0)), 0.0);
  parallel_for(a.rows(), [&](std::int64_t ri) {
    const int r = static_cast<int>(ri);
    const double* ar = a.row(r);
    const double* br = b.row(r);
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) s += std::fabs(ar[c] - br[c]);
    partial[static_cast<std::size_t>(r)] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatchers.
// ---------------------------------------------------------------------------

#define SINGIT_DISPATCH(fn, ...)                         \
  do {                                                   \
    if (exec_mode() == ExecMode::Parallel)               \
      return par::fn(__VA_ARGS__);                       \
    return serial::fn(__VA_ARGS__);                      \
  } while (0)

void matmul(const Mat& a, const Mat& b, Mat& c) { SINGIT_DISPATCH(matmul, a, b, c); }
void matmul_tA(const Mat& a, const Mat& b, Mat& c) { SINGIT_DISPATCH(matmul_tA, a, b, c); }
void matmul_tB(const Mat& a, const Mat& b, Mat& c) { SINGIT_DISPATCH(matmul_tB, a, b, c); }
void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out) {
  SINGIT_DISPATCH(conv1d, in, w, bias, out);
}
void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin) {
  SINGIT_DISPATCH(conv1d_grad_input, w, gout, gin);
}
void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb) {
  SINGIT_DISPATCH(conv1d_grad_params, in, gout, gw, gb);
}
double sum_sq_diff(const Mat& a, const Mat& b) { SINGIT_DISPATCH(sum_sq_diff, a, b); }
double sum_abs_diff(const Mat& a, const Mat& b) { SINGIT_DISPATCH(sum_abs_diff, a, b); }

#undef SINGIT_DISPATCH

void relu_inplace(Mat& x) {
  parallel_for(x.rows(), [&](std::int64_t r) {
    double* p = x.row(static_cast<int>(r));
    for (int c = 0; c < x.cols(); ++c)
      if (p[c] < 0.0) p[c] = 0.0;
  });
}

void relu_backward(const Mat& pre, Mat& grad) {
  if (!pre.same_shape(grad)) throw ShapeError("relu_backward: shape mismatch");
  parallel_for(pre.rows(), [&](std::int64_t r) {
    const double* pp = pre.row(static_cast<int>(r));
    double* gp = grad.row(static_cast<int>(r));
    for (int c = 0; c < pre.cols(); ++c)
      if (pp[c] <= 0.0) gp[c] = 0.0;
  });
}

void tanh_inplace(Mat& x) {
  parallel_for(x.rows(), [&](std::int64_t r) {
    double* p = x.row(static_cast<int>(r));
    for (int c = 0; c < x.cols(); ++c) p[c] = std::tanh(p[c]);
  });
}

void add_inplace(Mat& x, const Mat& y) {
  if (!x.same_shape(y)) throw ShapeError("add_inplace: shape mismatch");
  parallel_for(x.rows(), [&](std::int64_t r) {
    double* xp = x.row(static_cast<int>(r));
    const double* yp = y.row(static_cast<int>(r));
    for (int c = 0; c < x.cols(); ++c) xp[c] += yp[c];
  });
}

double max_abs(const Mat& x) {
  double m = 0.0;
  for (int r = 0; r < x.rows(); ++r) {
    const double* p = x.row(r);
    for (int c = 0; c < x.cols(); ++c) m = std::max(m, std::fabs(p[c]));
  }
  return m;
}

}  // namespace singit::kernels
