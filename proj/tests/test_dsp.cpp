// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <cmath>
#include <complex>

#include "singit/dsp.hpp"
#include "test_util.hpp"

using namespace singit;
using namespace singit::dsp;

namespace {

int column_argmax(const kernels::Mat& m, int col) {
  int best = 0;
  for (int r = 1; r < m.rows(); ++r)
    if (m(r, col) > m(best, col)) best = r;
  return best;
}

double max_abs_sample(const std::vector<double>& v) {
  double m = 0.0;
  for (double s : v) m = std::max(m, std::fabs(s));
  return m;
}

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("stft shape follows the frame-count formula") {
  const StftConfig cfg;
  const auto w = testutil::white_noise(1.0, 16000, 3);
  const auto s = stft(w, cfg);
  CHECK(s.rows == 256);
  CHECK(s.cols == 101);

  // Independent check of T = floor(len/hop) + 1 on odd lengths.
  Waveform w2 = w;
  w2.samples.resize(16063);
  const auto s2 = stft(w2, cfg);
  CHECK(s2.cols == 16063 / 160 + 1);
}

TEST_CASE("stft of silence is zero, stft is linear") {
  const StftConfig cfg;
  Waveform z;
  z.samples.assign(16000, 0.0);
  const auto s = stft(z, cfg);
  for (const auto& v : s.v) CHECK(std::abs(v) == 0.0);

  const auto w = testutil::speech_like(0.7, 16000, 21);
  Waveform scaled = w;
  for (auto& x : scaled.samples) x *= 0.37;
  const auto sa = stft(w, cfg);
  const auto sb = stft(scaled, cfg);
  double peak = 0.0;
  for (const auto& v : sa.v) peak = std::max(peak, std::abs(v));
  REQUIRE(peak > 0.0);
  for (std::size_t i = 0; i < sa.v.size(); ++i)
    CHECK(std::abs(sa.v[i] * 0.37 - sb.v[i]) <= 1e-12 * peak);
}

TEST_CASE("1 kHz sine concentrates in bin 32 on interior frames") {
  const StftConfig cfg;
  const auto w = testutil::sine_wave(1000.0, 1.0);
  const auto m = magnitude(stft(w, cfg), cfg);
  // Frames whose window sits fully inside the signal span.
  for (int c = 2; c <= 98; ++c) CHECK(column_argmax(m.values, c) == 32);
}

TEST_CASE("istft inverts stft away from the edges") {
  const StftConfig cfg;
  const auto w = testutil::white_noise(1.0, 16000, 17);
  const auto y = istft(stft(w, cfg), cfg, w.size());
  REQUIRE(y.size() == w.size());
  CHECK(y.sample_rate == 16000);
  const double peak = max_abs_sample(w.samples);
  for (std::int64_t i = cfg.n_fft; i < w.size() - cfg.n_fft; ++i)
    CHECK(std::fabs(y.samples[static_cast<std::size_t>(i)] - w.samples[static_cast<std::size_t>(i)]) <
          1e-6 * peak);
}

TEST_CASE("istft round trip holds for other overlap-add-valid configs") {
  for (const auto& [nfft, hop, win] : {std::tuple{512, 128, "hann"}, std::tuple{256, 256, "rect"},
                                       std::tuple{320, 80, "hann"}}) {
    StftConfig cfg;
    cfg.n_fft = nfft;
    cfg.hop = hop;
    cfg.window = win;
    const auto w = testutil::speech_like(0.5, 16000, 23);
    const auto y = istft(stft(w, cfg), cfg, w.size());
    const double peak = max_abs_sample(w.samples);
    for (std::int64_t i = cfg.n_fft; i < w.size() - cfg.n_fft; ++i)
      CHECK(std::fabs(y.samples[static_cast<std::size_t>(i)] - w.samples[static_cast<std::size_t>(i)]) <
            1e-6 * peak);
  }
}

TEST_CASE("istft of a zero matrix is silence; sine survives the round trip") {
  const StftConfig cfg;
  ComplexSpectrogram z(cfg.bins(), 101);
  const auto y = istft(z, cfg, 16000);
  REQUIRE(y.size() == 16000);
  for (double s : y.samples) CHECK(s == 0.0);

  const auto w = testutil::sine_wave(1000.0, 1.0);
  const auto back = istft(stft(w, cfg), cfg, w.size());
  const auto m = magnitude(stft(back, cfg), cfg);
  for (int c = 2; c <= 98; ++c) CHECK(column_argmax(m.values, c) == 32);
}

TEST_CASE("istft validates shape and length") {
  const StftConfig cfg;
  ComplexSpectrogram bad(100, 10);
  CHECK_THROWS_AS(istft(bad, cfg, 100), ShapeError);
  ComplexSpectrogram s(cfg.bins(), 10);
  // 10 frames cover (10-1)*160 + 510 padded samples; minus center pad.
  const std::int64_t avail = 9 * 160 + 510 - 255;
  CHECK_NOTHROW(istft(s, cfg, avail));
  CHECK_THROWS_AS(istft(s, cfg, avail + 1), Error);
}

TEST_CASE("stft rejects empty input, bad configs are rejected") {
  const StftConfig cfg;
  Waveform empty;
  CHECK_THROWS_AS(stft(empty, cfg), DegenerateInputError);

  StftConfig bad = cfg;
  bad.hop = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.hop = 600;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.window = "kaiser";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sample_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(make_window("kaiser", 16), ConfigError);
}

TEST_CASE("log scaling formula at pinned points") {
  MagnitudeSpectrogram m;
  m.values = kernels::Mat(1, 3);
  m.values(0, 0) = 1e-5;
  m.values(0, 1) = 1.0;
  m.values(0, 2) = 1e-2;
  const auto x = mag_to_log(m);
  CHECK(x.values(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(x.values(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x.values(0, 2) == doctest::Approx(0.6).epsilon(1e-12));

  // Zeros hit the floor; huge values clip at 1.
  m.values(0, 0) = 0.0;
  m.values(0, 1) = 500.0;
  const auto x2 = mag_to_log(m);
  CHECK(x2.values(0, 0) == 0.0);
  CHECK(x2.values(0, 1) == 1.0);
}

TEST_CASE("log scaling inverts exactly on the invertible range") {
  LogSpectrogram x;
  x.values = kernels::Mat(1, 2);
  x.values(0, 0) = 0.6;
  x.values(0, 1) = 1.0;
  const auto m = log_to_mag(x);
  CHECK(m.values(0, 0) == doctest::Approx(1e-2).epsilon(1e-12));
  CHECK(m.values(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(31);
  MagnitudeSpectrogram rand_m;
  rand_m.values = kernels::Mat(16, 33);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 33; ++c) {
      // log-uniform over [1e-5, 1]
      rand_m.values(r, c) = std::pow(10.0, rng.uniform(-5.0, 0.0));
    }
  const auto round = log_to_mag(mag_to_log(rand_m));
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 33; ++c)
      CHECK(std::fabs(round.values(r, c) - rand_m.values(r, c)) <=
            1e-9 * rand_m.values(r, c));
}

TEST_CASE("log_to_mag rejects out-of-range entries") {
  LogSpectrogram x;
  x.values = kernels::Mat(2, 2);
  x.values(1, 1) = 1.5;
  CHECK_THROWS_AS(log_to_mag(x), ValidationError);
  x.values(1, 1) = -0.1;
  CHECK_THROWS_AS(log_to_mag(x), ValidationError);
}

TEST_CASE("griffin_lim of zero magnitude is silence") {
  const StftConfig cfg;
  MagnitudeSpectrogram m;
  m.config = cfg;
  m.values = kernels::Mat(cfg.bins(), 21);
  GriffinLimOptions opt;
  opt.iters = 3;
  const auto y = griffin_lim(m, opt);
  REQUIRE(y.size() == 20 * 160 + 1);
  for (double s : y.samples) CHECK(s == 0.0);
}

TEST_CASE("griffin_lim restores a 440 Hz tone to within one bin") {
  const StftConfig cfg;
  const auto w = testutil::sine_wave(440.0, 1.0);
  const auto m = magnitude(stft(w, cfg), cfg);
  GriffinLimOptions opt;
  opt.iters = 60;
  opt.seed = 5;
  opt.length = w.size();
  const auto y = griffin_lim(m, opt);
  REQUIRE(y.size() == w.size());
  const auto m2 = magnitude(stft(y, cfg), cfg);
  const int want = static_cast<int>(std::lround(440.0 * cfg.n_fft / cfg.sample_rate));
  for (int c = 10; c <= 90; ++c) {
    const int got = column_argmax(m2.values, c);
    CHECK(std::abs(got - want) <= 1);
  }
}

TEST_CASE("griffin_lim objective is non-increasing") {
  const StftConfig cfg;
  const auto w = testutil::speech_like(1.0, 16000, 41);
  const auto m = magnitude(stft(w, cfg), cfg);
  GriffinLimOptions opt;
  opt.iters = 30;
  opt.seed = 9;
  std::vector<double> obj;
  griffin_lim(m, opt, &obj);
  REQUIRE(obj.size() == 30);
  CHECK(obj.front() > 0.0);
  for (std::size_t i = 1; i < obj.size(); ++i)
    CHECK(obj[i] <= obj[i - 1] * (1.0 + 1e-12));
  CHECK(obj.back() < obj.front());
}

TEST_CASE("griffin_lim is seed-deterministic and honors zero-phase init") {
  const StftConfig cfg;
  const auto w = testutil::speech_like(0.4, 16000, 43);
  const auto m = magnitude(stft(w, cfg), cfg);
  GriffinLimOptions opt;
  opt.iters = 8;
  opt.seed = 77;
  const auto y1 = griffin_lim(m, opt);
  const auto y2 = griffin_lim(m, opt);
  REQUIRE(y1.size() == y2.size());
  for (std::int64_t i = 0; i < y1.size(); ++i)
    CHECK(y1.samples[static_cast<std::size_t>(i)] == y2.samples[static_cast<std::size_t>(i)]);

  opt.seed = 78;
  const auto y3 = griffin_lim(m, opt);
  double diff = 0.0;
  for (std::int64_t i = 0; i < y1.size(); ++i)
    diff = std::max(diff, std::fabs(y1.samples[static_cast<std::size_t>(i)] -
                                    y3.samples[static_cast<std::size_t>(i)]));
  CHECK(diff > 0.0);

  GriffinLimOptions zp;
  zp.iters = 8;
  zp.zero_phase_init = true;
  const auto z1 = griffin_lim(m, zp);
  zp.seed = 123;  // seed is irrelevant under zero-phase init
  const auto z2 = griffin_lim(m, zp);
  for (std::int64_t i = 0; i < z1.size(); ++i)
    CHECK(z1.samples[static_cast<std::size_t>(i)] == z2.samples[static_cast<std::size_t>(i)]);
}

TEST_CASE("griffin_lim validates inputs") {
  const StftConfig cfg;
  MagnitudeSpectrogram m;
  m.config = cfg;
  m.values = kernels::Mat(cfg.bins(), 4);
  GriffinLimOptions opt;
  opt.iters = 0;
  CHECK_THROWS_AS(griffin_lim(m, opt), ConfigError);
  opt.iters = 1;
  m.values(3, 2) = -0.5;
  CHECK_THROWS_AS(griffin_lim(m, opt), ValidationError);
  MagnitudeSpectrogram wrong;
  wrong.config = cfg;
  wrong.values = kernels::Mat(10, 4);
  CHECK_THROWS_AS(griffin_lim(wrong, opt), ShapeError);
}

TEST_CASE("spectrogram files round trip") {
  testutil::TempDir tmp;
  const StftConfig cfg;
  const auto w = testutil::speech_like(0.3, 16000, 51);
  const auto x = mag_to_log(magnitude(stft(w, cfg), cfg));
  const std::string path = tmp.file("x.spec");
  save_log_spectrogram(x, path);
  const auto back = load_log_spectrogram(path);
  REQUIRE(back.values.rows() == x.values.rows());
  REQUIRE(back.values.cols() == x.values.cols());
  CHECK(back.config == x.config);
  // Payload is f32: expect single-precision rounding, nothing worse.
  for (std::int64_t i = 0; i < x.values.size(); ++i)
    CHECK(std::fabs(back.values.data()[i] - x.values.data()[i]) < 1e-6);

  CHECK_THROWS_AS(load_log_spectrogram(tmp.file("missing.spec")), IoError);
}

}  // TEST_SUITE
