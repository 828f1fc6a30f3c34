// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Deterministic signal processing: STFT analysis/synthesis, log-magnitude
// scaling, and Griffin-Lim phase reconstruction. Everything here is a pure
// function of its inputs and safe to call from any number of threads.

#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "singit/common.hpp"
#include "singit/kernels.hpp"

namespace singit::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(size()) / sample_rate : 0.0;
  }
};

struct StftConfig {
  int n_fft = 510;          // 510 -> 256 frequency bins
  int hop = 160;            // 10 ms at 16 kHz
  std::string window = "hann";
  int sample_rate = 16000;

  int bins() const { return n_fft / 2 + 1; }
  // Throws ConfigError on invalid sizes or a window/hop pair without
  // nonzero overlap-add coverage.
  void validate() const;
  bool operator==(const StftConfig& o) const {
    return n_fft == o.n_fft && hop == o.hop && window == o.window &&
           sample_rate == o.sample_rate;
  }
};

struct MagnitudeSpectrogram {
  kernels::Mat values;  // bins x frames, non-negative
  StftConfig config;
};

// Normalized log-magnitude spectrogram, the model's working representation.
// Values produced by mag_to_log lie in [0, 1]; raw model outputs are nominal
// and are validated/clamped where a strict range is required.
struct LogSpectrogram {
  kernels::Mat values;  // bins x frames
  StftConfig config;
};

// Complex spectrogram, bins x frames, row-major.
struct ComplexSpectrogram {
  int rows = 0, cols = 0;
  std::vector<std::complex<double>> v;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {}
  std::complex<double>& operator()(int r, int c) {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  const std::complex<double>& operator()(int r, int c) const {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
};

std::vector<double> make_window(const std::string& name, int length);

// Center-padded analysis: frame count is floor(len / hop) + 1. Spectra are
// scaled by 2/sum(window) so a full-scale sinusoid peaks near magnitude 1,
// keeping speech inside the log scale's invertible range; istft compensates.
ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg);

// Least-squares overlap-add synthesis. Returns exactly `length` samples and
// rescales to peak 1 if the synthesis overshoots. Throws when `length`
// exceeds the synthesizable span.
Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, std::int64_t length);

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& s, const StftConfig& cfg);

// X = clip((20*log10(max(M, 1e-5)) + 100) / 100, 0, 1), entrywise.
LogSpectrogram mag_to_log(const MagnitudeSpectrogram& m);

// M = 10^((100*X - 100) / 20). Entries must lie in [0, 1].
MagnitudeSpectrogram log_to_mag(const LogSpectrogram& x);

struct GriffinLimOptions {
  int iters = 60;
  std::uint64_t seed = 0;
  bool zero_phase_init = false;  // default is seeded random phase
  std::int64_t length = 0;       // 0: (frames-1)*hop + 1 samples
};

// Plain alternating-projection Griffin-Lim. When `objective` is non-null it
// receives ||(|stft(x_k)|) - M||_F for each iteration; the sequence is
// non-increasing.
Waveform griffin_lim(const MagnitudeSpectrogram& m, const GriffinLimOptions& opt,
                     std::vector<double>* objective = nullptr);

// Spectrogram container (.spec): text header plus little-endian f32 payload.
void save_log_spectrogram(const LogSpectrogram& x, const std::string& path);
LogSpectrogram load_log_spectrogram(const std::string& path);

}  // namespace singit::dsp
