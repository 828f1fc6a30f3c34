// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Numeric kernels used by the DSP and model layers. Every kernel exists in
// two forms: a plain serial reference (namespace `serial`) and an OpenMP
// version (namespace `par`). The dispatching functions at namespace scope
// pick one according to the global execution mode.
//
// Determinism contract: for a given input, serial and parallel variants
// produce bitwise-identical results regardless of thread count. Reductions
// accumulate per-row partials serially within a row and combine rows in
// ascending index order; parallel variants only distribute independent
// rows/elements across threads and never reorder floating-point sums.

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "singit/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace singit::kernels {

enum class ExecMode { Serial, Parallel };

void set_exec_mode(ExecMode m);
ExecMode exec_mode();
int max_threads();

// Dense row-major matrix of doubles. Rows are channels/feature dims, columns
// are time frames throughout the codebase.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("Mat: negative dimension");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t size() const { return static_cast<std::int64_t>(rows_) * cols_; }
  bool empty() const { return size() == 0; }

  double& operator()(int r, int c) { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return v_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row(int r) { return v_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return v_.data() + static_cast<std::size_t>(r) * cols_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

// N-d tensor used for parameters (conv weights are 3-d). Data is contiguous,
// last index fastest.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    v.assign(static_cast<std::size_t>(n), 0.0);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  double& operator()(int i) { return v[static_cast<std::size_t>(i)]; }
  double operator()(int i) const { return v[static_cast<std::size_t>(i)]; }
  double& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  double& operator()(int i, int j, int k) {
    return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double operator()(int i, int j, int k) const {
    return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
};

// Runs f(i) for i in [0, n). Parallel when the global mode says so; the body
// must only write locations owned by iteration i.
template <class F>
inline void parallel_for(std::int64_t n, F&& f) {
  if (n <= 0) return;
#ifdef _OPENMP
  if (exec_mode() == ExecMode::Parallel && n > 1) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

namespace serial {
void matmul(const Mat& a, const Mat& b, Mat& c);          // c = a * b
void matmul_tA(const Mat& a, const Mat& b, Mat& c);       // c = a^T * b
void matmul_tB(const Mat& a, const Mat& b, Mat& c);       // c = a * b^T
void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out);
void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin);
void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb);
double sum_sq_diff(const Mat& a, const Mat& b);
double sum_abs_diff(const Mat& a, const Mat& b);
}  // namespace serial

namespace par {
void matmul(const Mat& a, const Mat& b, Mat& c);
void matmul_tA(const Mat& a, const Mat& b, Mat& c);
void matmul_tB(const Mat& a, const Mat& b, Mat& c);
void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out);
void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin);
void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb);
double sum_sq_diff(const Mat& a, const Mat& b);
double sum_abs_diff(const Mat& a, const Mat& b);
}  // namespace par

// Mode-dispatching entry points. Output matrices are (re)sized as needed;
// conv1d_grad_params accumulates into caller-shaped gw/gb.
void matmul(const Mat& a, const Mat& b, Mat& c);
void matmul_tA(const Mat& a, const Mat& b, Mat& c);
void matmul_tB(const Mat& a, const Mat& b, Mat& c);

// 1-D convolution over time with zero padding, odd kernel, stride 1.
// w shape (c_out, c_in, k); out shape (c_out, T). grad_params accumulates.
void conv1d(const Mat& in, const Tensor& w, const Tensor& bias, Mat& out);
void conv1d_grad_input(const Tensor& w, const Mat& gout, Mat& gin);
void conv1d_grad_params(const Mat& in, const Mat& gout, Tensor& gw, Tensor& gb);

double sum_sq_diff(const Mat& a, const Mat& b);
double sum_abs_diff(const Mat& a, const Mat& b);

// Elementwise helpers (parallel over rows, deterministic).
void relu_inplace(Mat& x);
void relu_backward(const Mat& pre, Mat& grad);    // zero grad where pre <= 0
void tanh_inplace(Mat& x);
void add_inplace(Mat& x, const Mat& y);
double max_abs(const Mat& x);

}  // namespace singit::kernels
