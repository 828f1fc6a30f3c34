// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace singit::model {

using kernels::Mat;
using kernels::Tensor;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// --- caches ---------------------------------------------------------------

struct ConvCache {
  std::vector<Mat> in;
};

struct BnCache {
  std::vector<double> mean, var, inv_std;  // per channel, batch statistics
  std::vector<Mat> xhat;                   // normalized values, pre scale/shift
};

struct ReluCache {
  std::vector<Mat> pre;  // values before clipping
};

struct LstmDirCache {
  Mat x;  // input as consumed (already reversed for the backward direction)
  Mat gi, gf, gg, go;  // gate activations, H x T
  Mat c, tanh_c, h;    // cell track, H x T
};

struct BlstmCache {
  LstmDirCache fwd, bwd;
};

struct EncCache {
  std::vector<int> orig_T, padded_T;
  std::vector<Mat> concat_in;  // cached concat inputs (conv1 input)
  ConvCache conv2_in, conv3_in;
  BnCache bn1, bn2, bn3;
  ReluCache relu1, relu2, relu3;
  std::vector<BlstmCache> lstm;
};

struct DecCache {
  std::vector<int> T;
  std::vector<Mat> concat_in;  // blstm1 input
  std::vector<BlstmCache> lstm1, lstm2;
  ConvCache conv1_in, conv2_in, conv3_in;
  BnCache bn1, bn2, bn3;
  ReluCache relu1, relu2, relu3;
  std::vector<Mat> lstm2_out;  // projection input
};

struct PostCache {
  std::vector<ConvCache> conv_in;   // one per layer
  std::vector<ReluCache> tanh_out;  // tanh OUTPUT per non-final layer
};

}  // namespace

// Full training-pass record; lives behind a shared_ptr in ForwardResult.
struct ForwardCache {
  EncCache enc1, enc2;
  DecCache dec;
  PostCache post;
};

namespace {

// --- parameter bookkeeping --------------------------------------------------

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  double init_bound;  // 0 = zeros
};

// Canonical creation order; RNG consumption follows this list exactly.
std::vector<TensorSpec> learnable_specs(const ModelConfig& c) {
  const int F = c.freq_bins, E = c.emb_dim, C = c.conv_channels, K = c.conv_kernel;
  const int He = c.enc_lstm_hidden, Hd = c.dec_lstm_hidden, D = c.code_dim();
  std::vector<TensorSpec> s;
  auto conv = [&](const std::string& p, int cout, int cin) {
    s.push_back({p + ".w", {cout, cin, K}, 1.0 / std::sqrt(static_cast<double>(cin) * K)});
    s.push_back({p + ".b", {cout}, 0.0});
  };
  auto bn = [&](const std::string& p, int ch) {
    s.push_back({p + ".gamma", {ch}, 0.0});
    s.push_back({p + ".beta", {ch}, 0.0});
  };
  auto lstm = [&](const std::string& p, int in, int h) {
    for (const char* dir : {"fwd", "bwd"}) {
      s.push_back({p + "." + dir + ".w_ih", {4 * h, in}, 1.0 / std::sqrt(static_cast<double>(in))});
      s.push_back({p + "." + dir + ".w_hh", {4 * h, h}, 1.0 / std::sqrt(static_cast<double>(h))});
      s.push_back({p + "." + dir + ".b", {4 * h}, 0.0});
    }
  };

  conv("enc.conv1", C, F + E);
  bn("enc.bn1", C);
  conv("enc.conv2", C, C);
  bn("enc.bn2", C);
  conv("enc.conv3", C, C);
  bn("enc.bn3", C);
  lstm("enc.lstm", C, He);

  lstm("dec.lstm1", D + E, Hd);
  conv("dec.conv1", C, 2 * Hd);
  bn("dec.bn1", C);
  conv("dec.conv2", C, C);
  bn("dec.bn2", C);
  conv("dec.conv3", C, C);
  bn("dec.bn3", C);
  lstm("dec.lstm2", C, Hd);
  s.push_back({"dec.proj.w", {F, 2 * Hd}, 1.0 / std::sqrt(2.0 * Hd)});
  s.push_back({"dec.proj.b", {F}, 0.0});

  for (int l = 1; l <= c.postnet_layers; ++l) {
    const int cin = l == 1 ? F : C;
    const int cout = l == c.postnet_layers ? F : C;
    conv("post.conv" + std::to_string(l), cout, cin);
  }
  return s;
}

std::vector<std::string> bn_prefixes(const ModelConfig&) {
  return {"enc.bn1", "enc.bn2", "enc.bn3", "dec.bn1", "dec.bn2", "dec.bn3"};
}

// --- batched layer primitives ----------------------------------------------

std::vector<Mat> conv_layer(const ModelParams& p, const std::string& prefix,
                            const std::vector<Mat>& in, ConvCache* cache) {
  const Tensor& w = p.t(prefix + ".w");
  const Tensor& b = p.t(prefix + ".b");
  std::vector<Mat> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = Mat(w.shape[0], in[i].cols());
    kernels::conv1d(in[i], w, b, out[i]);
  }
  if (cache) cache->in = in;
  return out;
}

void conv_backward(const ModelParams& p, const std::string& prefix, const ConvCache& cache,
                   const std::vector<Mat>& gout, GradStore& g, std::vector<Mat>* gin) {
  const Tensor& w = p.t(prefix + ".w");
  Tensor& gw = g[prefix + ".w"];
  Tensor& gb = g[prefix + ".b"];
  if (gin) gin->resize(gout.size());
  for (std::size_t i = 0; i < gout.size(); ++i) {
    kernels::conv1d_grad_params(cache.in[i], gout[i], gw, gb);
    if (gin) {
      (*gin)[i] = Mat(cache.in[i].rows(), cache.in[i].cols());
      kernels::conv1d_grad_input(w, gout[i], (*gin)[i]);
    }
  }
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

std::vector<Mat> bn_train(const ModelParams& p, const std::string& prefix,
                          const std::vector<Mat>& in, BnCache& cache) {
  const Tensor& gamma = p.t(prefix + ".gamma");
  const Tensor& beta = p.t(prefix + ".beta");
  const int ch = gamma.shape[0];
  std::int64_t n = 0;
  for (const auto& m : in) n += m.cols();

  cache.mean.assign(static_cast<std::size_t>(ch), 0.0);
  cache.var.assign(static_cast<std::size_t>(ch), 0.0);
  cache.inv_std.assign(static_cast<std::size_t>(ch), 0.0);
  cache.xhat.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) cache.xhat[i] = Mat(ch, in[i].cols());
  std::vector<Mat> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = Mat(ch, in[i].cols());

  // Per-channel moments over batch and time, biased variance.
  kernels::parallel_for(ch, [&](std::int64_t c) {
    double s = 0.0;
    for (const auto& m : in)
      for (int t = 0; t < m.cols(); ++t) s += m(static_cast<int>(c), t);
    const double mean = s / n;
    double v = 0.0;
    for (const auto& m : in)
      for (int t = 0; t < m.cols(); ++t) {
        const double d = m(static_cast<int>(c), t) - mean;
        v += d * d;
      }
    const double var = v / n;
    const double inv_std = 1.0 / std::sqrt(var + kBnEps);
    cache.mean[static_cast<std::size_t>(c)] = mean;
    cache.var[static_cast<std::size_t>(c)] = var;
    cache.inv_std[static_cast<std::size_t>(c)] = inv_std;
    const double gm = gamma(static_cast<int>(c)), bt = beta(static_cast<int>(c));
    for (std::size_t i = 0; i < in.size(); ++i)
      for (int t = 0; t < in[i].cols(); ++t) {
        const double xh = (in[i](static_cast<int>(c), t) - mean) * inv_std;
        cache.xhat[i](static_cast<int>(c), t) = xh;
        out[i](static_cast<int>(c), t) = gm * xh + bt;
      }
  });
  return out;
}

std::vector<Mat> bn_infer(const ModelParams& p, const std::string& prefix,
                          const std::vector<Mat>& in) {
  const Tensor& gamma = p.t(prefix + ".gamma");
  const Tensor& beta = p.t(prefix + ".beta");
  const Tensor& rm = p.buffers.at(prefix + ".running_mean");
  const Tensor& rv = p.buffers.at(prefix + ".running_var");
  const int ch = gamma.shape[0];
  std::vector<Mat> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = Mat(ch, in[i].cols());
  kernels::parallel_for(ch, [&](std::int64_t c) {
    const double inv_std = 1.0 / std::sqrt(rv(static_cast<int>(c)) + kBnEps);
    const double mean = rm(static_cast<int>(c));
    const double gm = gamma(static_cast<int>(c)), bt = beta(static_cast<int>(c));
    for (std::size_t i = 0; i < in.size(); ++i)
      for (int t = 0; t < in[i].cols(); ++t)
        out[i](static_cast<int>(c), t) = gm * (in[i](static_cast<int>(c), t) - mean) * inv_std + bt;
  });
  return out;
}

std::vector<Mat> bn_backward(const ModelParams& p, const std::string& prefix,
                             const BnCache& cache, const std::vector<Mat>& gout, GradStore& g) {
  const Tensor& gamma = p.t(prefix + ".gamma");
  const int ch = gamma.shape[0];
  std::int64_t n = 0;
  for (const auto& m : gout) n += m.cols();
  Tensor& ggamma = g[prefix + ".gamma"];
  Tensor& gbeta = g[prefix + ".beta"];
  std::vector<Mat> gin(gout.size());
  for (std::size_t i = 0; i < gout.size(); ++i) gin[i] = Mat(ch, gout[i].cols());

  kernels::parallel_for(ch, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < gout.size(); ++i)
      for (int t = 0; t < gout[i].cols(); ++t) {
        const double dy = gout[i](c, t);
        sum_dy += dy;
        sum_dy_xh += dy * cache.xhat[i](c, t);
      }
    ggamma(c) += sum_dy_xh;
    gbeta(c) += sum_dy;
    const double gm = gamma(c);
    const double inv_std = cache.inv_std[static_cast<std::size_t>(c)];
    // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
    for (std::size_t i = 0; i < gout.size(); ++i)
      for (int t = 0; t < gout[i].cols(); ++t) {
        const double dy = gout[i](c, t);
        gin[i](c, t) = gm * inv_std / n *
                       (n * dy - sum_dy - cache.xhat[i](c, t) * sum_dy_xh);
      }
  });
  return gin;
}

std::vector<Mat> relu_layer(std::vector<Mat> in, ReluCache* cache) {
  if (cache) cache->pre = in;
  for (auto& m : in) kernels::relu_inplace(m);
  return in;
}

void relu_backprop(const ReluCache& cache, std::vector<Mat>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) kernels::relu_backward(cache.pre[i], grad[i]);
}

// --- LSTM -------------------------------------------------------------------

Mat reverse_cols(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(r, c) = m(r, m.cols() - 1 - c);
  return out;
}

// One direction over x (in x T); returns outputs h (H x T) in cache.
void lstm_dir_forward(const Tensor& w_ih, const Tensor& w_hh, const Tensor& b, Mat x,
                      LstmDirCache& cache) {
  const int H = w_hh.shape[1];
  const int T = x.cols();
  const int in = x.rows();

  Mat wx(4 * H, T);
  {
    Mat wih_m(4 * H, in);
    std::memcpy(wih_m.data(), w_ih.v.data(), w_ih.v.size() * sizeof(double));
    kernels::matmul(wih_m, x, wx);
  }
  cache.x = std::move(x);
  cache.gi = Mat(H, T);
  cache.gf = Mat(H, T);
  cache.gg = Mat(H, T);
  cache.go = Mat(H, T);
  cache.c = Mat(H, T);
  cache.tanh_c = Mat(H, T);
  cache.h = Mat(H, T);

  std::vector<double> hprev(static_cast<std::size_t>(H), 0.0);
  std::vector<double> cprev(static_cast<std::size_t>(H), 0.0);
  std::vector<double> a(static_cast<std::size_t>(4 * H));
  for (int t = 0; t < T; ++t) {
    // a = wx[:,t] + b + w_hh * h_prev
    kernels::parallel_for(4 * H, [&](std::int64_t r) {
      double acc = wx(static_cast<int>(r), t) + b(static_cast<int>(r));
      for (int k = 0; k < H; ++k) acc += w_hh(static_cast<int>(r), k) * hprev[static_cast<std::size_t>(k)];
      a[static_cast<std::size_t>(r)] = acc;
    });
    for (int k = 0; k < H; ++k) {
      const double i = sigmoid(a[static_cast<std::size_t>(k)]);
      const double f = sigmoid(a[static_cast<std::size_t>(H + k)]);
      const double gg = std::tanh(a[static_cast<std::size_t>(2 * H + k)]);
      const double o = sigmoid(a[static_cast<std::size_t>(3 * H + k)]);
      const double c = f * cprev[static_cast<std::size_t>(k)] + i * gg;
      const double tc = std::tanh(c);
      cache.gi(k, t) = i;
      cache.gf(k, t) = f;
      cache.gg(k, t) = gg;
      cache.go(k, t) = o;
      cache.c(k, t) = c;
      cache.tanh_c(k, t) = tc;
      cache.h(k, t) = o * tc;
      cprev[static_cast<std::size_t>(k)] = c;
      hprev[static_cast<std::size_t>(k)] = o * tc;
    }
  }
}

// gh is dL/dh (H x T); returns dL/dx and accumulates parameter grads.
Mat lstm_dir_backward(const Tensor& w_ih, const Tensor& w_hh, const LstmDirCache& cache,
                      const Mat& gh, Tensor& gw_ih, Tensor& gw_hh, Tensor& gb) {
  const int H = w_hh.shape[1];
  const int T = cache.h.cols();
  const int in = cache.x.rows();

  Mat da(4 * H, T);
  std::vector<double> dh_next(static_cast<std::size_t>(H), 0.0);
  std::vector<double> dc_next(static_cast<std::size_t>(H), 0.0);
  for (int t = T - 1; t >= 0; --t) {
    for (int k = 0; k < H; ++k) {
      const double i = cache.gi(k, t), f = cache.gf(k, t), gg = cache.gg(k, t),
                   o = cache.go(k, t), tc = cache.tanh_c(k, t);
      const double dh = gh(k, t) + dh_next[static_cast<std::size_t>(k)];
      const double dmo = dh * tc;
      const double dc = dc_next[static_cast<std::size_t>(k)] + dh * o * (1.0 - tc * tc);
      const double cprev = t > 0 ? cache.c(k, t - 1) : 0.0;
      const double di = dc * gg;
      const double df = dc * cprev;
      const double dg = dc * i;
      dc_next[static_cast<std::size_t>(k)] = dc * f;
      da(k, t) = di * i * (1.0 - i);
      da(H + k, t) = df * f * (1.0 - f);
      da(2 * H + k, t) = dg * (1.0 - gg * gg);
      da(3 * H + k, t) = dmo * o * (1.0 - o);
    }
    // dh_{t-1} += w_hh^T * da_t
    kernels::parallel_for(H, [&](std::int64_t k) {
      double acc = 0.0;
      for (int r = 0; r < 4 * H; ++r) acc += w_hh(r, static_cast<int>(k)) * da(r, t);
      dh_next[static_cast<std::size_t>(k)] = acc;
    });
  }

  // Batched parameter and input grads from the collected gate grads.
  Mat wih_m(4 * H, in);
  std::memcpy(wih_m.data(), w_ih.v.data(), w_ih.v.size() * sizeof(double));
  Mat gx(in, T);
  kernels::matmul_tA(wih_m, da, gx);

  Mat gwih(4 * H, in);
  kernels::matmul_tB(da, cache.x, gwih);
  for (std::int64_t idx = 0; idx < gwih.size(); ++idx) gw_ih.v[static_cast<std::size_t>(idx)] += gwih.data()[idx];

  Mat hprev(H, T);  // columns: h_{t-1}, first column zero
  for (int k = 0; k < H; ++k)
    for (int t = 1; t < T; ++t) hprev(k, t) = cache.h(k, t - 1);
  Mat gwhh(4 * H, H);
  kernels::matmul_tB(da, hprev, gwhh);
  for (std::int64_t idx = 0; idx < gwhh.size(); ++idx) gw_hh.v[static_cast<std::size_t>(idx)] += gwhh.data()[idx];

  for (int r = 0; r < 4 * H; ++r) {
    double acc = 0.0;
    for (int t = 0; t < T; ++t) acc += da(r, t);
    gb(r) += acc;
  }
  return gx;
}

// Bidirectional wrapper: rows [fwd; bwd] of the output.
Mat blstm_forward(const ModelParams& p, const std::string& prefix, const Mat& x,
                  BlstmCache* cache) {
  BlstmCache local;
  BlstmCache& cc = cache ? *cache : local;
  lstm_dir_forward(p.t(prefix + ".fwd.w_ih"), p.t(prefix + ".fwd.w_hh"), p.t(prefix + ".fwd.b"),
                   x, cc.fwd);
  lstm_dir_forward(p.t(prefix + ".bwd.w_ih"), p.t(prefix + ".bwd.w_hh"), p.t(prefix + ".bwd.b"),
                   reverse_cols(x), cc.bwd);
  const int H = cc.fwd.h.rows();
  const int T = x.cols();
  Mat out(2 * H, T);
  for (int k = 0; k < H; ++k)
    for (int t = 0; t < T; ++t) {
      out(k, t) = cc.fwd.h(k, t);
      out(H + k, t) = cc.bwd.h(k, T - 1 - t);
    }
  return out;
}

Mat blstm_backward(const ModelParams& p, const std::string& prefix, const BlstmCache& cache,
                   const Mat& gout, GradStore& g) {
  const int H = cache.fwd.h.rows();
  const int T = gout.cols();
  Mat gh_fwd(H, T), gh_bwd(H, T);
  for (int k = 0; k < H; ++k)
    for (int t = 0; t < T; ++t) {
      gh_fwd(k, t) = gout(k, t);
      gh_bwd(k, t) = gout(H + k, T - 1 - t);  // reversed time, matching cache
    }
  Mat gx = lstm_dir_backward(p.t(prefix + ".fwd.w_ih"), p.t(prefix + ".fwd.w_hh"), cache.fwd,
                             gh_fwd, g[prefix + ".fwd.w_ih"], g[prefix + ".fwd.w_hh"],
                             g[prefix + ".fwd.b"]);
  Mat gx_rev = lstm_dir_backward(p.t(prefix + ".bwd.w_ih"), p.t(prefix + ".bwd.w_hh"), cache.bwd,
                                 gh_bwd, g[prefix + ".bwd.w_ih"], g[prefix + ".bwd.w_hh"],
                                 g[prefix + ".bwd.b"]);
  const Mat gx_bwd = reverse_cols(gx_rev);
  kernels::add_inplace(gx, gx_bwd);
  return gx;
}

// --- padding and sampling ----------------------------------------------------

Mat pad_edge_right(const Mat& x, int target_T) {
  if (x.cols() == target_T) return x;
  Mat out(x.rows(), target_T);
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
    for (int c = x.cols(); c < target_T; ++c) out(r, c) = x(r, x.cols() - 1);
  }
  return out;
}

// --- encoder ------------------------------------------------------------------

std::vector<Mat> encoder_forward(const ModelParams& p, const std::vector<Mat>& xs,
                                 const std::vector<std::vector<double>>& es, bool training,
                                 EncCache* cache) {
  if (training && !cache) throw ShapeError("encoder_forward: training pass needs a cache");
  const ModelConfig& cfg = p.config;
  const std::size_t B = xs.size();
  std::vector<Mat> c0(B);
  std::vector<int> orig_T(B), padded_T(B);
  for (std::size_t i = 0; i < B; ++i) {
    if (xs[i].rows() != cfg.freq_bins)
      throw ShapeError("encode: input has " + std::to_string(xs[i].rows()) +
                       " rows, config expects " + std::to_string(cfg.freq_bins));
    if (static_cast<int>(es[i].size()) != cfg.emb_dim)
      throw ShapeError("encode: embedding dimension mismatch");
    if (xs[i].cols() < 1) throw ShapeError("encode: empty spectrogram");
    orig_T[i] = xs[i].cols();
    padded_T[i] = ceil_div(xs[i].cols(), cfg.downsample) * cfg.downsample;
    c0[i] = concat_embedding(pad_edge_right(xs[i], padded_T[i]), es[i]);
  }
  if (cache) {
    cache->orig_T = orig_T;
    cache->padded_T = padded_T;
    cache->concat_in = c0;
  }

  auto h1 = conv_layer(p, "enc.conv1", c0, nullptr);  // input cached as concat_in
  h1 = training ? bn_train(p, "enc.bn1", h1, cache->bn1) : bn_infer(p, "enc.bn1", h1);
  h1 = relu_layer(std::move(h1), cache ? &cache->relu1 : nullptr);

  auto h2 = conv_layer(p, "enc.conv2", h1, cache ? &cache->conv2_in : nullptr);
  h2 = training ? bn_train(p, "enc.bn2", h2, cache->bn2) : bn_infer(p, "enc.bn2", h2);
  h2 = relu_layer(std::move(h2), cache ? &cache->relu2 : nullptr);

  auto h3 = conv_layer(p, "enc.conv3", h2, cache ? &cache->conv3_in : nullptr);
  h3 = training ? bn_train(p, "enc.bn3", h3, cache->bn3) : bn_infer(p, "enc.bn3", h3);
  h3 = relu_layer(std::move(h3), cache ? &cache->relu3 : nullptr);

  if (cache) cache->lstm.resize(B);
  std::vector<Mat> codes(B);
  const int H = cfg.enc_lstm_hidden;
  const int ds = cfg.downsample;
  for (std::size_t i = 0; i < B; ++i) {
    BlstmCache local;
    Mat ho = blstm_forward(p, "enc.lstm", h3[i], cache ? &cache->lstm[i] : &local);
    const int n = padded_T[i] / ds;
    Mat cd(2 * H, n);
    // Forward states at the end of each group, backward states at the start:
    // each kept pair has seen the whole group from both sides.
    for (int m = 0; m < n; ++m)
      for (int k = 0; k < H; ++k) {
        cd(k, m) = ho(k, m * ds + ds - 1);
        cd(H + k, m) = ho(H + k, m * ds);
      }
    codes[i] = std::move(cd);
  }
  return codes;
}

// Returns gradients w.r.t. the original (unpadded) encoder inputs when
// need_input_grad is set; the embedding rows are dropped and the replicated
// pad columns fold back onto the last real frame.
std::vector<Mat> encoder_backward(const ModelParams& p, const EncCache& cache,
                                  const std::vector<Mat>& gcodes, GradStore& g,
                                  bool need_input_grad) {
  const ModelConfig& cfg = p.config;
  const std::size_t B = gcodes.size();
  const int H = cfg.enc_lstm_hidden;
  const int ds = cfg.downsample;

  std::vector<Mat> gh3(B);
  for (std::size_t i = 0; i < B; ++i) {
    Mat gho(2 * H, cache.padded_T[i]);
    const int n = cache.padded_T[i] / ds;
    for (int m = 0; m < n; ++m)
      for (int k = 0; k < H; ++k) {
        gho(k, m * ds + ds - 1) += gcodes[i](k, m);
        gho(H + k, m * ds) += gcodes[i](H + k, m);
      }
    gh3[i] = blstm_backward(p, "enc.lstm", cache.lstm[i], gho, g);
  }

  relu_backprop(cache.relu3, gh3);
  auto gbn3 = bn_backward(p, "enc.bn3", cache.bn3, gh3, g);
  std::vector<Mat> gh2;
  conv_backward(p, "enc.conv3", cache.conv3_in, gbn3, g, &gh2);

  relu_backprop(cache.relu2, gh2);
  auto gbn2 = bn_backward(p, "enc.bn2", cache.bn2, gh2, g);
  std::vector<Mat> gh1;
  conv_backward(p, "enc.conv2", cache.conv2_in, gbn2, g, &gh1);

  relu_backprop(cache.relu1, gh1);
  auto gbn1 = bn_backward(p, "enc.bn1", cache.bn1, gh1, g);
  ConvCache c1;
  c1.in = cache.concat_in;
  std::vector<Mat> gc0;
  conv_backward(p, "enc.conv1", c1, gbn1, g, need_input_grad ? &gc0 : nullptr);

  std::vector<Mat> gx;
  if (need_input_grad) {
    gx.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
      const int T = cache.orig_T[i];
      Mat gi(cfg.freq_bins, T);
      for (int r = 0; r < cfg.freq_bins; ++r) {
        for (int t = 0; t < T; ++t) gi(r, t) = gc0[i](r, t);
        for (int t = T; t < cache.padded_T[i]; ++t) gi(r, T - 1) += gc0[i](r, t);
      }
      gx[i] = std::move(gi);
    }
  }
  return gx;
}

// --- decoder ------------------------------------------------------------------

std::vector<Mat> decoder_forward(const ModelParams& p, const std::vector<Mat>& codes,
                                 const std::vector<int>& orig_T,
                                 const std::vector<std::vector<double>>& es, bool training,
                                 DecCache* cache) {
  if (training && !cache) throw ShapeError("decoder_forward: training pass needs a cache");
  const ModelConfig& cfg = p.config;
  const std::size_t B = codes.size();
  std::vector<Mat> d0(B);
  for (std::size_t i = 0; i < B; ++i) {
    ContentCodes cc;
    cc.codes = codes[i];
    cc.original_T = orig_T[i];
    d0[i] = concat_embedding(upsample_codes(cc, cfg.downsample), es[i]);
  }
  if (cache) {
    cache->T = orig_T;
    cache->concat_in = d0;
    cache->lstm1.resize(B);
    cache->lstm2.resize(B);
    cache->lstm2_out.resize(B);
  }

  std::vector<Mat> l1(B);
  for (std::size_t i = 0; i < B; ++i) {
    BlstmCache local;
    l1[i] = blstm_forward(p, "dec.lstm1", d0[i], cache ? &cache->lstm1[i] : &local);
  }

  auto h1 = conv_layer(p, "dec.conv1", l1, cache ? &cache->conv1_in : nullptr);
  h1 = training ? bn_train(p, "dec.bn1", h1, cache->bn1) : bn_infer(p, "dec.bn1", h1);
  h1 = relu_layer(std::move(h1), cache ? &cache->relu1 : nullptr);

  auto h2 = conv_layer(p, "dec.conv2", h1, cache ? &cache->conv2_in : nullptr);
  h2 = training ? bn_train(p, "dec.bn2", h2, cache->bn2) : bn_infer(p, "dec.bn2", h2);
  h2 = relu_layer(std::move(h2), cache ? &cache->relu2 : nullptr);

  auto h3 = conv_layer(p, "dec.conv3", h2, cache ? &cache->conv3_in : nullptr);
  h3 = training ? bn_train(p, "dec.bn3", h3, cache->bn3) : bn_infer(p, "dec.bn3", h3);
  h3 = relu_layer(std::move(h3), cache ? &cache->relu3 : nullptr);

  const Tensor& pw = p.t("dec.proj.w");
  const Tensor& pb = p.t("dec.proj.b");
  Mat pw_m(pw.shape[0], pw.shape[1]);
  std::memcpy(pw_m.data(), pw.v.data(), pw.v.size() * sizeof(double));

  std::vector<Mat> out(B);
  for (std::size_t i = 0; i < B; ++i) {
    BlstmCache local;
    Mat l2 = blstm_forward(p, "dec.lstm2", h3[i], cache ? &cache->lstm2[i] : &local);
    out[i] = Mat(cfg.freq_bins, l2.cols());
    kernels::matmul(pw_m, l2, out[i]);
    for (int r = 0; r < out[i].rows(); ++r)
      for (int t = 0; t < out[i].cols(); ++t) out[i](r, t) += pb(r);
    if (cache) cache->lstm2_out[i] = std::move(l2);
  }
  return out;
}

std::vector<Mat> decoder_backward(const ModelParams& p, const DecCache& cache,
                                  const std::vector<Mat>& gout, GradStore& g) {
  const ModelConfig& cfg = p.config;
  const std::size_t B = gout.size();
  const Tensor& pw = p.t("dec.proj.w");
  Mat pw_m(pw.shape[0], pw.shape[1]);
  std::memcpy(pw_m.data(), pw.v.data(), pw.v.size() * sizeof(double));
  Tensor& gpw = g["dec.proj.w"];
  Tensor& gpb = g["dec.proj.b"];

  std::vector<Mat> gh3(B);
  for (std::size_t i = 0; i < B; ++i) {
    Mat gpw_i(pw.shape[0], pw.shape[1]);
    kernels::matmul_tB(gout[i], cache.lstm2_out[i], gpw_i);
    for (std::int64_t idx = 0; idx < gpw_i.size(); ++idx) gpw.v[static_cast<std::size_t>(idx)] += gpw_i.data()[idx];
    for (int r = 0; r < gout[i].rows(); ++r) {
      double acc = 0.0;
      for (int t = 0; t < gout[i].cols(); ++t) acc += gout[i](r, t);
      gpb(r) += acc;
    }
    Mat gl2(pw.shape[1], gout[i].cols());
    kernels::matmul_tA(pw_m, gout[i], gl2);
    gh3[i] = blstm_backward(p, "dec.lstm2", cache.lstm2[i], gl2, g);
  }

  relu_backprop(cache.relu3, gh3);
  auto gbn3 = bn_backward(p, "dec.bn3", cache.bn3, gh3, g);
  std::vector<Mat> gh2;
  conv_backward(p, "dec.conv3", cache.conv3_in, gbn3, g, &gh2);

  relu_backprop(cache.relu2, gh2);
  auto gbn2 = bn_backward(p, "dec.bn2", cache.bn2, gh2, g);
  std::vector<Mat> gh1;
  conv_backward(p, "dec.conv2", cache.conv2_in, gbn2, g, &gh1);

  relu_backprop(cache.relu1, gh1);
  auto gbn1 = bn_backward(p, "dec.bn1", cache.bn1, gh1, g);
  std::vector<Mat> gl1;
  conv_backward(p, "dec.conv1", cache.conv1_in, gbn1, g, &gl1);

  const int ds = cfg.downsample;
  const int D = cfg.code_dim();
  std::vector<Mat> gcodes(B);
  for (std::size_t i = 0; i < B; ++i) {
    Mat gd0 = blstm_backward(p, "dec.lstm1", cache.lstm1[i], gl1[i], g);
    // Drop the embedding rows; fold the repeats back onto their code column.
    const int T = cache.T[i];
    const int n = ceil_div(T, ds);
    Mat gc(D, n);
    for (int r = 0; r < D; ++r)
      for (int t = 0; t < T; ++t) gc(r, t / ds) += gd0(r, t);
    gcodes[i] = std::move(gc);
  }
  return gcodes;
}

// --- postnet ------------------------------------------------------------------

std::vector<Mat> postnet_forward(const ModelParams& p, const std::vector<Mat>& xhat,
                                 PostCache* cache) {
  const int L = p.config.postnet_layers;
  if (cache) {
    cache->conv_in.resize(static_cast<std::size_t>(L));
    cache->tanh_out.resize(static_cast<std::size_t>(L > 0 ? L - 1 : 0));
  }
  std::vector<Mat> h = xhat;
  for (int l = 1; l <= L; ++l) {
    h = conv_layer(p, "post.conv" + std::to_string(l), h,
                   cache ? &cache->conv_in[static_cast<std::size_t>(l - 1)] : nullptr);
    if (l < L) {
      for (auto& m : h) kernels::tanh_inplace(m);
      if (cache) cache->tanh_out[static_cast<std::size_t>(l - 1)].pre = h;  // stores tanh OUTPUT
    }
  }
  std::vector<Mat> out(xhat.size());
  for (std::size_t i = 0; i < xhat.size(); ++i) {
    out[i] = h[i];
    kernels::add_inplace(out[i], xhat[i]);  // residual connection
  }
  return out;
}

// Returns the gradient reaching xhat through the residual branch only.
std::vector<Mat> postnet_backward(const ModelParams& p, const PostCache& cache,
                                  const std::vector<Mat>& gout, GradStore& g) {
  const int L = p.config.postnet_layers;
  std::vector<Mat> gh = gout;
  for (int l = L; l >= 1; --l) {
    if (l < L) {
      // tanh'(x) = 1 - y^2 with y the stored output
      const auto& y = cache.tanh_out[static_cast<std::size_t>(l - 1)].pre;
      for (std::size_t i = 0; i < gh.size(); ++i)
        for (std::int64_t idx = 0; idx < gh[i].size(); ++idx) {
          const double yo = y[i].data()[idx];
          gh[i].data()[idx] *= 1.0 - yo * yo;
        }
    }
    std::vector<Mat> gin;
    conv_backward(p, "post.conv" + std::to_string(l), cache.conv_in[static_cast<std::size_t>(l - 1)],
                  gh, g, &gin);
    gh = std::move(gin);
  }
  return gh;
}

GradStore zero_grads(const ModelParams& p) {
  GradStore g;
  for (const auto& [name, t] : p.tensors) g.emplace(name, Tensor(t.shape));
  return g;
}

}  // namespace

// --- public API ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (freq_bins < 1 || emb_dim < 1 || conv_channels < 1 || conv_kernel < 1 ||
      enc_lstm_hidden < 1 || dec_lstm_hidden < 1 || postnet_layers < 1)
    throw ConfigError("ModelConfig: all counts must be >= 1");
  if (downsample < 1) throw ConfigError("ModelConfig: downsample must be >= 1");
  if (conv_kernel % 2 == 0) throw ConfigError("ModelConfig: conv_kernel must be odd");
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  return freq_bins == o.freq_bins && emb_dim == o.emb_dim && conv_channels == o.conv_channels &&
         conv_kernel == o.conv_kernel && enc_lstm_hidden == o.enc_lstm_hidden &&
         dec_lstm_hidden == o.dec_lstm_hidden && downsample == o.downsample &&
         postnet_layers == o.postnet_layers;
}

kernels::Tensor& ModelParams::t(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("no such tensor: " + name);
  return it->second;
}

const kernels::Tensor& ModelParams::t(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("no such tensor: " + name);
  return it->second;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  Rng rng(seed);
  for (const auto& spec : learnable_specs(cfg)) {
    Tensor t(spec.shape);
    if (spec.init_bound > 0.0)
      for (auto& v : t.v) v = (2.0 * rng.uniform() - 1.0) * spec.init_bound;
    p.tensors.emplace(spec.name, std::move(t));
  }
  // BN scale 1; LSTM forget-gate bias 1 so the gate starts open.
  for (const auto& prefix : bn_prefixes(cfg)) {
    auto& gamma = p.t(prefix + ".gamma");
    for (auto& v : gamma.v) v = 1.0;
    p.buffers.emplace(prefix + ".running_mean", Tensor({cfg.conv_channels}));
    Tensor rv({cfg.conv_channels});
    for (auto& v : rv.v) v = 1.0;
    p.buffers.emplace(prefix + ".running_var", std::move(rv));
  }
  for (const char* lp : {"enc.lstm", "dec.lstm1", "dec.lstm2"}) {
    for (const char* dir : {"fwd", "bwd"}) {
      auto& b = p.t(std::string(lp) + "." + dir + ".b");
      const int H = b.shape[0] / 4;
      for (int k = 0; k < H; ++k) b(H + k) = 1.0;
    }
  }
  return p;
}

kernels::Mat concat_embedding(const Mat& x, const std::vector<double>& e) {
  Mat out(x.rows() + static_cast<int>(e.size()), x.cols());
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
  for (int i = 0; i < static_cast<int>(e.size()); ++i)
    for (int c = 0; c < x.cols(); ++c) out(x.rows() + i, c) = e[static_cast<std::size_t>(i)];
  return out;
}

kernels::Mat upsample_codes(const ContentCodes& c, int downsample) {
  if (downsample < 1) throw ConfigError("upsample_codes: downsample must be >= 1");
  if (c.original_T < 1) throw ShapeError("upsample_codes: empty codes");
  const int T = static_cast<int>(c.original_T);
  Mat out(c.codes.rows(), T);
  for (int r = 0; r < c.codes.rows(); ++r)
    for (int t = 0; t < T; ++t) out(r, t) = c.codes(r, t / downsample);
  return out;
}

ContentCodes encode(const ModelParams& p, const dsp::LogSpectrogram& x,
                    const speaker::SpeakerEmbedding& e) {
  auto codes = encoder_forward(p, {x.values}, {e.v}, false, nullptr);
  ContentCodes out;
  out.codes = std::move(codes[0]);
  out.original_T = x.values.cols();
  out.stft = x.config;
  return out;
}

dsp::LogSpectrogram decode(const ModelParams& p, const ContentCodes& c,
                           const speaker::SpeakerEmbedding& e) {
  if (c.codes.rows() != p.config.code_dim())
    throw ShapeError("decode: code dimension mismatch");
  if (static_cast<int>(e.v.size()) != p.config.emb_dim)
    throw ShapeError("decode: embedding dimension mismatch");
  auto out = decoder_forward(p, {c.codes}, {static_cast<int>(c.original_T)}, {e.v}, false, nullptr);
  dsp::LogSpectrogram y;
  y.values = std::move(out[0]);
  y.config = c.stft;
  return y;
}

dsp::LogSpectrogram postnet_apply(const ModelParams& p, const dsp::LogSpectrogram& xhat) {
  if (xhat.values.rows() != p.config.freq_bins)
    throw ShapeError("postnet_apply: row count mismatch");
  auto out = postnet_forward(p, {xhat.values}, nullptr);
  dsp::LogSpectrogram y;
  y.values = std::move(out[0]);
  y.config = xhat.config;
  return y;
}

ForwardResult train_forward(const ModelParams& p, const TrainBatch& batch) {
  if (batch.x.empty() || batch.x.size() != batch.e.size())
    throw ShapeError("train_forward: empty or mismatched batch");
  ForwardResult r;
  r.cache = std::make_shared<ForwardCache>();
  ForwardCache& c = *r.cache;

  r.codes_in = encoder_forward(p, batch.x, batch.e, true, &c.enc1);
  std::vector<int> orig_T(batch.x.size());
  for (std::size_t i = 0; i < batch.x.size(); ++i) orig_T[i] = batch.x[i].cols();
  r.xhat = decoder_forward(p, r.codes_in, orig_T, batch.e, true, &c.dec);
  r.xtilde = postnet_forward(p, r.xhat, &c.post);
  r.codes_out = encoder_forward(p, r.xtilde, batch.e, true, &c.enc2);
  return r;
}

void update_running_stats(ModelParams& p, const ForwardResult& f) {
  auto apply = [&](const std::string& prefix, const BnCache& c) {
    Tensor& rm = p.buffers.at(prefix + ".running_mean");
    Tensor& rv = p.buffers.at(prefix + ".running_var");
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      rm.v[i] = (1.0 - kBnMomentum) * rm.v[i] + kBnMomentum * c.mean[i];
      rv.v[i] = (1.0 - kBnMomentum) * rv.v[i] + kBnMomentum * c.var[i];
    }
  };
  const ForwardCache& c = *f.cache;
  // Module call order of the pass: encoder, decoder, second encoder pass.
  apply("enc.bn1", c.enc1.bn1);
  apply("enc.bn2", c.enc1.bn2);
  apply("enc.bn3", c.enc1.bn3);
  apply("dec.bn1", c.dec.bn1);
  apply("dec.bn2", c.dec.bn2);
  apply("dec.bn3", c.dec.bn3);
  apply("enc.bn1", c.enc2.bn1);
  apply("enc.bn2", c.enc2.bn2);
  apply("enc.bn3", c.enc2.bn3);
}

GradStore backward(const ModelParams& p, const TrainBatch& batch, const ForwardResult& f,
                   const LossWeights& w) {
  const std::size_t B = batch.x.size();
  GradStore g = zero_grads(p);
  const ForwardCache& c = *f.cache;

  // Loss seeds. Each per-sample loss is a mean over its own entries and the
  // batch loss is the mean over samples.
  std::vector<Mat> gxhat(B), gxtilde(B), gcodes_out(B), gcodes_in(B);
  for (std::size_t i = 0; i < B; ++i) {
    const Mat& x = batch.x[i];
    const double n = static_cast<double>(x.size());
    gxhat[i] = Mat(x.rows(), x.cols());
    gxtilde[i] = Mat(x.rows(), x.cols());
    for (std::int64_t idx = 0; idx < x.size(); ++idx) {
      gxhat[i].data()[idx] = w.w1 * 2.0 / (n * B) * (f.xhat[i].data()[idx] - x.data()[idx]);
      gxtilde[i].data()[idx] = w.w2 * 2.0 / (n * B) * (f.xtilde[i].data()[idx] - x.data()[idx]);
    }

    const Mat& ci = f.codes_in[i];
    const Mat& co = f.codes_out[i];
    const double n3 = static_cast<double>(ci.size());
    gcodes_out[i] = Mat(ci.rows(), ci.cols());
    gcodes_in[i] = Mat(ci.rows(), ci.cols());
    for (std::int64_t idx = 0; idx < ci.size(); ++idx) {
      const double d = co.data()[idx] - ci.data()[idx];
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      gcodes_out[i].data()[idx] = w.w3 * s / (n3 * B);
      gcodes_in[i].data()[idx] = -w.w3 * s / (n3 * B);
    }
  }

  // The second encoder pass feeds L3 only; its input gradient lands on the
  // postnet output.
  if (w.w3 != 0.0) {
    auto gxt_enc2 = encoder_backward(p, c.enc2, gcodes_out, g, true);
    for (std::size_t i = 0; i < B; ++i) kernels::add_inplace(gxtilde[i], gxt_enc2[i]);
  }

  // xtilde = xhat + R(xhat): identity path plus the conv branch.
  auto gresid = postnet_backward(p, c.post, gxtilde, g);
  for (std::size_t i = 0; i < B; ++i) {
    kernels::add_inplace(gxhat[i], gxtilde[i]);
    kernels::add_inplace(gxhat[i], gresid[i]);
  }

  auto gcodes_dec = decoder_backward(p, c.dec, gxhat, g);
  for (std::size_t i = 0; i < B; ++i) kernels::add_inplace(gcodes_in[i], gcodes_dec[i]);
  encoder_backward(p, c.enc1, gcodes_in, g, false);
  return g;
}

void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "SINGIT-CKPT-V1\n";
  f << "step " << p.step << "\n";
  const ModelConfig& c = p.config;
  f << "freq_bins " << c.freq_bins << "\n";
  f << "emb_dim " << c.emb_dim << "\n";
  f << "conv_channels " << c.conv_channels << "\n";
  f << "conv_kernel " << c.conv_kernel << "\n";
  f << "enc_lstm_hidden " << c.enc_lstm_hidden << "\n";
  f << "dec_lstm_hidden " << c.dec_lstm_hidden << "\n";
  f << "downsample " << c.downsample << "\n";
  f << "postnet_layers " << c.postnet_layers << "\n";
  f << "n_fft " << p.stft.n_fft << "\n";
  f << "hop " << p.stft.hop << "\n";
  f << "window " << p.stft.window << "\n";
  f << "sample_rate " << p.stft.sample_rate << "\n";
  f << "tensors " << p.tensors.size() + p.buffers.size() << "\n";
  auto header = [&](const char* tag, const std::string& name, const Tensor& t) {
    f << tag << " " << name << " " << t.shape.size();
    for (int d : t.shape) f << " " << d;
    f << "\n";
  };
  for (const auto& [name, t] : p.tensors) header("tensor", name, t);
  for (const auto& [name, t] : p.buffers) header("buffer", name, t);
  f << "data\n";
  auto payload = [&](const Tensor& t) {
    std::vector<float> buf(t.v.size());
    for (std::size_t i = 0; i < t.v.size(); ++i) buf[i] = static_cast<float>(t.v[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  };
  for (const auto& [name, t] : p.tensors) payload(t);
  for (const auto& [name, t] : p.buffers) payload(t);
  if (!f) throw IoError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "SINGIT-CKPT-V1")
    throw IoError("not a checkpoint file: " + path);

  ModelParams p;
  std::vector<std::pair<std::string, bool>> order;  // name, is_buffer
  std::int64_t tensor_count = -1;
  while (std::getline(f, line)) {
    if (line == "data") break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "step") ss >> p.step;
    else if (key == "freq_bins") ss >> p.config.freq_bins;
    else if (key == "emb_dim") ss >> p.config.emb_dim;
    else if (key == "conv_channels") ss >> p.config.conv_channels;
    else if (key == "conv_kernel") ss >> p.config.conv_kernel;
    else if (key == "enc_lstm_hidden") ss >> p.config.enc_lstm_hidden;
    else if (key == "dec_lstm_hidden") ss >> p.config.dec_lstm_hidden;
    else if (key == "downsample") ss >> p.config.downsample;
    else if (key == "postnet_layers") ss >> p.config.postnet_layers;
    else if (key == "n_fft") ss >> p.stft.n_fft;
    else if (key == "hop") ss >> p.stft.hop;
    else if (key == "window") ss >> p.stft.window;
    else if (key == "sample_rate") ss >> p.stft.sample_rate;
    else if (key == "tensors") ss >> tensor_count;
    else if (key == "tensor" || key == "buffer") {
      std::string name;
      std::size_t ndim;
      ss >> name >> ndim;
      std::vector<int> shape(ndim);
      for (auto& d : shape) ss >> d;
      if (!ss) throw IoError("malformed tensor header in " + path);
      Tensor t(shape);
      const bool is_buffer = key == "buffer";
      (is_buffer ? p.buffers : p.tensors).emplace(name, std::move(t));
      order.emplace_back(name, is_buffer);
    } else {
      throw IoError("unknown checkpoint key '" + key + "' in " + path);
    }
    if (!ss) throw IoError("malformed checkpoint header line in " + path);
  }
  if (tensor_count != static_cast<std::int64_t>(order.size()))
    throw IoError("tensor count mismatch in " + path);
  for (const auto& [name, is_buffer] : order) {
    Tensor& t = is_buffer ? p.buffers.at(name) : p.tensors.at(name);
    std::vector<float> buf(t.v.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw IoError("truncated checkpoint payload: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) t.v[i] = buf[i];
  }
  p.config.validate();
  return p;
}

}  // namespace singit::model
