// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>

namespace singit::dsp {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// FFTW plan cache. Plan creation is not thread-safe; execution on distinct
// buffers is. Plans are created with FFTW_ESTIMATE | FFTW_UNALIGNED so any
// caller buffer works and planning is deterministic.
struct PlanPair {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
};

std::mutex g_plan_mutex;
std::map<int, PlanPair>& plan_cache() {
  static std::map<int, PlanPair> cache;
  return cache;
}

PlanPair get_plans(int n) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto& cache = plan_cache();
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> re(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> cx(static_cast<std::size_t>(n / 2 + 1));
  PlanPair p;
  p.r2c = fftw_plan_dft_r2c_1d(n, re.data(), reinterpret_cast<fftw_complex*>(cx.data()),
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.c2r = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(cx.data()), re.data(),
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p.r2c || !p.c2r) throw Error("fftw plan creation failed");
  cache[n] = p;
  return p;
}

void rfft(const PlanPair& p, double* in, std::complex<double>* out) {
  fftw_execute_dft_r2c(p.r2c, in, reinterpret_cast<fftw_complex*>(out));
}

// Unnormalized inverse; caller divides by n. Destroys `in`.
void irfft(const PlanPair& p, std::complex<double>* in, double* out) {
  fftw_execute_dft_c2r(p.c2r, reinterpret_cast<fftw_complex*>(in), out);
}

std::int64_t padded_length(int frames, const StftConfig& cfg) {
  return static_cast<std::int64_t>(frames - 1) * cfg.hop + cfg.n_fft;
}

// Analysis spectra carry amplitude units: a full-scale sinusoid peaks near
// magnitude 1, the top of the log scale's invertible range. Synthesis undoes
// the factor, so round trips are unaffected.
double analysis_scale(const std::vector<double>& win) {
  double s = 0.0;
  for (double w : win) s += w;
  return 2.0 / s;
}

// Analysis on an already padded buffer; frame j covers [j*hop, j*hop+n_fft).
void frames_to_spectra(const std::vector<double>& padded, const std::vector<double>& win,
                       const StftConfig& cfg, ComplexSpectrogram& out) {
  const int frames = out.cols;
  const int n = cfg.n_fft;
  const int bins = cfg.bins();
  const double scale = analysis_scale(win);
  PlanPair plans = get_plans(n);
  kernels::parallel_for(frames, [&](std::int64_t j) {
    std::vector<double> buf(static_cast<std::size_t>(n));
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins));
    const double* src = padded.data() + j * cfg.hop;
    for (int i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = src[i] * win[static_cast<std::size_t>(i)];
    rfft(plans, buf.data(), spec.data());
    for (int b = 0; b < bins; ++b) out(b, static_cast<int>(j)) = spec[static_cast<std::size_t>(b)] * scale;
  });
}

// Least-squares synthesis onto the padded domain:
//   y(s) = sum_j w(s - j*hop) x_j(s - j*hop) / sum_j w^2(s - j*hop).
// Per output sample, frames contribute in ascending j both in the serial
// and the chunked parallel schedule, so results are bitwise identical.
std::vector<double> spectra_to_padded_signal(const ComplexSpectrogram& s, const StftConfig& cfg,
                                             const std::vector<double>& win) {
  const int frames = s.cols;
  const int n = cfg.n_fft;
  const int bins = cfg.bins();
  const std::int64_t plen = padded_length(frames, cfg);
  PlanPair plans = get_plans(n);
  const double unscale = 1.0 / (n * analysis_scale(win));

  // Inverse-transform and window every frame independently.
  std::vector<double> frame_buf(static_cast<std::size_t>(frames) * n);
  kernels::parallel_for(frames, [&](std::int64_t j) {
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) spec[static_cast<std::size_t>(b)] = s(b, static_cast<int>(j));
    std::vector<double> time(static_cast<std::size_t>(n));
    irfft(plans, spec.data(), time.data());
    double* dst = frame_buf.data() + j * n;
    for (int i = 0; i < n; ++i) dst[i] = time[static_cast<std::size_t>(i)] * unscale * win[static_cast<std::size_t>(i)];
  });

  // Window-square normalization profile.
  std::vector<double> wsum(static_cast<std::size_t>(plen), 0.0);
  for (int j = 0; j < frames; ++j) {
    double* dst = wsum.data() + static_cast<std::int64_t>(j) * cfg.hop;
    for (int i = 0; i < n; ++i) dst[i] += win[static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
  }

  // Overlap-add in fixed chunks; each chunk scans overlapping frames in
  // ascending order.
  std::vector<double> y(static_cast<std::size_t>(plen), 0.0);
  const std::int64_t chunk = n;
  const std::int64_t nchunks = (plen + chunk - 1) / chunk;
  kernels::parallel_for(nchunks, [&](std::int64_t ci) {
    const std::int64_t lo = ci * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, plen);
    const std::int64_t j0 = std::max<std::int64_t>(0, (lo - n + cfg.hop) / cfg.hop);
    for (std::int64_t j = j0; j < frames && j * cfg.hop < hi; ++j) {
      const std::int64_t base = j * cfg.hop;
      const double* src = frame_buf.data() + j * n;
      const std::int64_t a = std::max(lo, base);
      const std::int64_t b = std::min(hi, base + n);
      for (std::int64_t t = a; t < b; ++t) y[static_cast<std::size_t>(t)] += src[t - base];
    }
    for (std::int64_t t = lo; t < hi; ++t) {
      const double d = wsum[static_cast<std::size_t>(t)];
      y[static_cast<std::size_t>(t)] = d > 1e-12 ? y[static_cast<std::size_t>(t)] / d : 0.0;
    }
  });
  return y;
}

void rescale_to_unit_peak(std::vector<double>& samples) {
  double peak = 0.0;
  for (double v : samples) peak = std::max(peak, std::fabs(v));
  if (peak > 1.0) {
    const double g = 1.0 / peak;
    for (double& v : samples) v *= g;
  }
}

}  // namespace

void StftConfig::validate() const {
  if (n_fft < 2) throw ConfigError("StftConfig: n_fft must be >= 2");
  if (hop < 1 || hop > n_fft) throw ConfigError("StftConfig: need 1 <= hop <= n_fft");
  if (sample_rate <= 0) throw ConfigError("StftConfig: sample_rate must be positive");
  const std::vector<double> win = make_window(window, n_fft);
  // Nonzero overlap-add coverage over one hop period of the steady state.
  for (int s = 0; s < hop; ++s) {
    double acc = 0.0;
    for (int t = s; t < n_fft; t += hop) acc += win[static_cast<std::size_t>(t)] * win[static_cast<std::size_t>(t)];
    if (acc <= 1e-10)
      throw ConfigError("StftConfig: window/hop pair leaves overlap-add gaps");
  }
}

std::vector<double> make_window(const std::string& name, int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  if (name == "hann") {
    for (int i = 0; i < length; ++i)
      w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * i / length);
  } else if (name == "rect") {
    std::fill(w.begin(), w.end(), 1.0);
  } else {
    throw ConfigError("unknown window: " + name);
  }
  return w;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw DegenerateInputError("stft: empty waveform");
  const int pad = cfg.n_fft / 2;
  const std::int64_t len = w.size();
  const int frames = static_cast<int>(len / cfg.hop) + 1;

  std::vector<double> padded(static_cast<std::size_t>(padded_length(frames, cfg)), 0.0);
  // Signal sample 0 sits at padded index `pad`; zeros elsewhere.
  const std::int64_t copy = std::min<std::int64_t>(len, static_cast<std::int64_t>(padded.size()) - pad);
  std::memcpy(padded.data() + pad, w.samples.data(), static_cast<std::size_t>(copy) * sizeof(double));

  const std::vector<double> win = make_window(cfg.window, cfg.n_fft);
  ComplexSpectrogram out(cfg.bins(), frames);
  frames_to_spectra(padded, win, cfg, out);
  return out;
}

Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, std::int64_t length) {
  cfg.validate();
  if (s.rows != cfg.bins()) throw ShapeError("istft: bin count does not match config");
  if (s.cols < 1) throw DegenerateInputError("istft: no frames");
  const int pad = cfg.n_fft / 2;
  const std::int64_t avail = padded_length(s.cols, cfg) - pad;
  if (length < 0 || length > avail)
    throw Error("istft: requested length " + std::to_string(length) +
                " exceeds synthesizable span " + std::to_string(avail));

  const std::vector<double> win = make_window(cfg.window, cfg.n_fft);
  std::vector<double> y = spectra_to_padded_signal(s, cfg, win);

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(y.begin() + pad, y.begin() + pad + length);
  rescale_to_unit_peak(out.samples);
  return out;
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& s, const StftConfig& cfg) {
  MagnitudeSpectrogram m;
  m.config = cfg;
  m.values = kernels::Mat(s.rows, s.cols);
  kernels::parallel_for(s.rows, [&](std::int64_t r) {
    for (int c = 0; c < s.cols; ++c)
      m.values(static_cast<int>(r), c) = std::abs(s(static_cast<int>(r), c));
  });
  return m;
}

LogSpectrogram mag_to_log(const MagnitudeSpectrogram& m) {
  LogSpectrogram x;
  x.config = m.config;
  x.values = kernels::Mat(m.values.rows(), m.values.cols());
  kernels::parallel_for(m.values.rows(), [&](std::int64_t r) {
    for (int c = 0; c < m.values.cols(); ++c) {
      const double mag = std::max(m.values(static_cast<int>(r), c), 1e-5);
      const double db = 20.0 * std::log10(mag);
      x.values(static_cast<int>(r), c) = std::clamp((db + 100.0) / 100.0, 0.0, 1.0);
    }
  });
  return x;
}

MagnitudeSpectrogram log_to_mag(const LogSpectrogram& x) {
  MagnitudeSpectrogram m;
  m.config = x.config;
  m.values = kernels::Mat(x.values.rows(), x.values.cols());
  for (int r = 0; r < x.values.rows(); ++r)
    for (int c = 0; c < x.values.cols(); ++c) {
      const double v = x.values(r, c);
      if (!(v >= 0.0 && v <= 1.0))
        throw ValidationError("log_to_mag: entry outside [0, 1] at (" + std::to_string(r) +
                              ", " + std::to_string(c) + ")");
    }
  kernels::parallel_for(x.values.rows(), [&](std::int64_t r) {
    for (int c = 0; c < x.values.cols(); ++c)
      m.values(static_cast<int>(r), c) =
          std::pow(10.0, (100.0 * x.values(static_cast<int>(r), c) - 100.0) / 20.0);
  });
  return m;
}

Waveform griffin_lim(const MagnitudeSpectrogram& m, const GriffinLimOptions& opt,
                     std::vector<double>* objective) {
  const StftConfig& cfg = m.config;
  cfg.validate();
  if (opt.iters < 1) throw ConfigError("griffin_lim: iters must be >= 1");
  const int bins = m.values.rows();
  const int frames = m.values.cols();
  if (bins != cfg.bins()) throw ShapeError("griffin_lim: bin count does not match config");
  for (int r = 0; r < bins; ++r)
    for (int c = 0; c < frames; ++c)
      if (!(m.values(r, c) >= 0.0) || !std::isfinite(m.values(r, c)))
        throw ValidationError("griffin_lim: magnitudes must be finite and non-negative");

  const std::vector<double> win = make_window(cfg.window, cfg.n_fft);

  // Initial phase: seeded random or zero phase.
  ComplexSpectrogram s(bins, frames);
  if (opt.zero_phase_init) {
    for (int r = 0; r < bins; ++r)
      for (int c = 0; c < frames; ++c) s(r, c) = m.values(r, c);
  } else {
    Rng rng(opt.seed);
    for (int r = 0; r < bins; ++r)
      for (int c = 0; c < frames; ++c) {
        const double a = kTwoPi * rng.uniform();
        s(r, c) = std::polar(m.values(r, c), a);
      }
  }

  if (objective) objective->clear();
  ComplexSpectrogram consistent(bins, frames);
  for (int it = 0; it < opt.iters; ++it) {
    // Project onto consistent spectra, measure, then restore magnitudes.
    std::vector<double> x = spectra_to_padded_signal(s, cfg, win);
    frames_to_spectra(x, win, cfg, consistent);

    if (objective) {
      // Frobenius distance over the full conjugate-symmetric spectrum;
      // interior bins count twice. Weighted overlap-add is the exact
      // least-squares inverse in this norm, so the sequence cannot increase.
      std::vector<double> partial(static_cast<std::size_t>(bins), 0.0);
      kernels::parallel_for(bins, [&](std::int64_t r) {
        const bool self_conj = r == 0 || (cfg.n_fft % 2 == 0 && r == bins - 1);
        const double wgt = self_conj ? 1.0 : 2.0;
        double acc = 0.0;
        for (int c = 0; c < frames; ++c) {
          const double d = std::abs(consistent(static_cast<int>(r), c)) - m.values(static_cast<int>(r), c);
          acc += wgt * d * d;
        }
        partial[static_cast<std::size_t>(r)] = acc;
      });
      double tot = 0.0;
      for (double p : partial) tot += p;
      objective->push_back(std::sqrt(tot));
    }

    kernels::parallel_for(bins, [&](std::int64_t r) {
      for (int c = 0; c < frames; ++c) {
        const std::complex<double> z = consistent(static_cast<int>(r), c);
        const double a = std::abs(z);
        const std::complex<double> ph = a > 0.0 ? z / a : std::complex<double>(1.0, 0.0);
        s(static_cast<int>(r), c) = m.values(static_cast<int>(r), c) * ph;
      }
    });
  }

  const std::int64_t length =
      opt.length > 0 ? opt.length : static_cast<std::int64_t>(frames - 1) * cfg.hop + 1;
  return istft(s, cfg, length);
}

void save_log_spectrogram(const LogSpectrogram& x, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "SINGIT-SPEC-V1\n";
  f << "rows " << x.values.rows() << "\n";
  f << "cols " << x.values.cols() << "\n";
  f << "n_fft " << x.config.n_fft << "\n";
  f << "hop " << x.config.hop << "\n";
  f << "window " << x.config.window << "\n";
  f << "sample_rate " << x.config.sample_rate << "\n";
  f << "data\n";
  std::vector<float> buf(static_cast<std::size_t>(x.values.size()));
  for (std::int64_t i = 0; i < x.values.size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(x.values.data()[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

LogSpectrogram load_log_spectrogram(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "SINGIT-SPEC-V1")
    throw IoError("not a spectrogram file: " + path);
  LogSpectrogram x;
  int rows = -1, cols = -1;
  while (std::getline(f, line)) {
    if (line == "data") break;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw IoError("malformed header in " + path);
    const std::string key = line.substr(0, sp), val = line.substr(sp + 1);
    if (key == "rows") rows = std::stoi(val);
    else if (key == "cols") cols = std::stoi(val);
    else if (key == "n_fft") x.config.n_fft = std::stoi(val);
    else if (key == "hop") x.config.hop = std::stoi(val);
    else if (key == "window") x.config.window = val;
    else if (key == "sample_rate") x.config.sample_rate = std::stoi(val);
    else throw IoError("unknown header key '" + key + "' in " + path);
  }
  if (rows <= 0 || cols <= 0) throw IoError("missing dimensions in " + path);
  x.values = kernels::Mat(rows, cols);
  std::vector<float> buf(static_cast<std::size_t>(x.values.size()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw IoError("truncated spectrogram file: " + path);
  for (std::int64_t i = 0; i < x.values.size(); ++i)
    x.values.data()[i] = buf[static_cast<std::size_t>(i)];
  return x;
}

}  // namespace singit::dsp
