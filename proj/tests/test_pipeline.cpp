// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "singit/data.hpp"
#include "singit/pipeline.hpp"
#include "singit/training.hpp"
#include "test_util.hpp"

using namespace singit;
using namespace singit::pipeline;

namespace {

// A narrow model sized for fast tests; the analysis settings stay at their
// defaults so real audio flows through unchanged.
model::ModelConfig narrow_config() {
  model::ModelConfig cfg;
  cfg.freq_bins = 256;
  cfg.emb_dim = 256;
  cfg.conv_channels = 8;
  cfg.conv_kernel = 3;
  cfg.enc_lstm_hidden = 2;
  cfg.dec_lstm_hidden = 4;
  cfg.downsample = 4;
  cfg.postnet_layers = 2;
  return cfg;
}

model::ModelParams fresh_params(std::uint64_t seed) {
  auto p = model::init_params(narrow_config(), seed);
  p.stft = dsp::StftConfig{};
  p.step = 1;  // silence the untrained-model warning in contract tests
  return p;
}

// One short self-reconstruction run, shared by the tests that want a model
// whose outputs reflect its inputs.
const model::ModelParams& trained_params() {
  static const model::ModelParams params = [] {
    std::vector<training::Utterance> ds;
    ds.push_back({"alice", "u1", data::Kind::Speech, testutil::speech_like(0.5, 16000, 51)});
    ds.push_back({"bob", "u2", data::Kind::Singing, testutil::speech_like(0.5, 16000, 52)});
    training::TrainConfig tcfg;
    tcfg.crop_frames = 16;
    tcfg.batch_size = 2;
    tcfg.lr = 1e-3;
    tcfg.lambda3 = 1.0;
    tcfg.seed = 5;
    tcfg.max_steps = 20;
    return training::train_loop(ds, narrow_config(), tcfg, dsp::StftConfig{}).params;
  }();
  return params;
}

double peak(const dsp::Waveform& w) {
  double m = 0.0;
  for (double s : w.samples) m = std::max(m, std::fabs(s));
  return m;
}

bool all_finite(const dsp::Waveform& w) {
  for (double s : w.samples)
    if (!std::isfinite(s)) return false;
  return true;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("transfer preserves duration and stays within full scale") {
  const auto& params = trained_params();
  const auto vocals = testutil::speech_like(0.5, 16000, 61);
  // The target voice was never part of the training data.
  const auto unseen = testutil::speech_like(0.6, 16000, 999);
  const auto e = speaker::embed_utterance(unseen);

  TransferOptions opt;
  opt.gl_iters = 12;
  const auto out = transfer_with_embedding(vocals, e, params, opt);
  CHECK(out.sample_rate == 16000);
  CHECK(out.samples.size() == vocals.samples.size());
  CHECK(peak(out) <= 1.0 + 1e-12);
  CHECK(all_finite(out));
}

TEST_CASE("transfer accepts target utterances directly") {
  const auto& params = trained_params();
  const auto vocals = testutil::speech_like(0.5, 16000, 62);
  std::vector<dsp::Waveform> speech_b;
  speech_b.push_back(testutil::speech_like(0.5, 16000, 63));
  speech_b.push_back(testutil::speech_like(0.5, 16000, 64));

  TransferOptions opt;
  opt.gl_iters = 8;
  const auto out = transfer(vocals, speech_b, params, opt);
  CHECK(out.samples.size() == vocals.samples.size());
  CHECK(peak(out) <= 1.0 + 1e-12);
  CHECK_THROWS_AS(transfer(vocals, {}, params, opt), DegenerateInputError);
}

TEST_CASE("the target embedding shapes the output") {
  const auto params = fresh_params(3);
  const auto vocals = testutil::speech_like(0.5, 16000, 65);
  const auto e1 = speaker::embed_utterance(testutil::speech_like(0.5, 16000, 66));
  const auto e2 = speaker::embed_utterance(testutil::sine_wave(300.0, 0.5, 16000, 0.4));

  TransferOptions opt;
  opt.gl_iters = 6;
  const auto out1 = transfer_with_embedding(vocals, e1, params, opt);
  const auto out2 = transfer_with_embedding(vocals, e2, params, opt);
  REQUIRE(out1.samples.size() == out2.samples.size());
  double diff = 0.0;
  for (std::size_t i = 0; i < out1.samples.size(); ++i)
    diff = std::max(diff, std::fabs(out1.samples[i] - out2.samples[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("the encoder conditioning switch changes the result") {
  const auto params = fresh_params(4);
  const auto vocals = testutil::speech_like(0.5, 16000, 67);
  const auto e = speaker::embed_utterance(testutil::speech_like(0.5, 16000, 68));

  TransferOptions a;
  a.gl_iters = 6;
  TransferOptions b = a;
  b.source_embedding_to_encoder = true;
  const auto out_a = transfer_with_embedding(vocals, e, params, a);
  const auto out_b = transfer_with_embedding(vocals, e, params, b);
  double diff = 0.0;
  for (std::size_t i = 0; i < out_a.samples.size(); ++i)
    diff = std::max(diff, std::fabs(out_a.samples[i] - out_b.samples[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("transfer is deterministic for a fixed phase seed") {
  const auto params = fresh_params(5);
  const auto vocals = testutil::speech_like(0.5, 16000, 69);
  const auto e = speaker::embed_utterance(testutil::speech_like(0.5, 16000, 70));
  TransferOptions opt;
  opt.gl_iters = 6;
  opt.gl_seed = 11;
  const auto o1 = transfer_with_embedding(vocals, e, params, opt);
  const auto o2 = transfer_with_embedding(vocals, e, params, opt);
  REQUIRE(o1.samples.size() == o2.samples.size());
  for (std::size_t i = 0; i < o1.samples.size(); ++i) CHECK(o1.samples[i] == o2.samples[i]);
}

TEST_CASE("sample-rate mismatches are rejected") {
  const auto params = fresh_params(6);
  auto vocals = testutil::speech_like(0.5, 16000, 71);
  vocals.sample_rate = 22050;
  const auto e = speaker::embed_utterance(testutil::speech_like(0.5, 16000, 72));
  CHECK_THROWS_AS(transfer_with_embedding(vocals, e, params), ValidationError);
}

TEST_CASE("song transfer separates, converts, and remixes") {
  const std::string mock = testutil::env_or("SINGIT_MOCK_SEPARATOR", "");
  REQUIRE_MESSAGE(!mock.empty(), "SINGIT_MOCK_SEPARATOR must point at the mock separator");
  const std::string cmd = mock + " {input} {outdir}";
  setenv("SINGIT_SEPARATOR_CMD", cmd.c_str(), 1);

  testutil::TempDir tmp;
  const auto song = testutil::speech_like(0.5, 16000, 73);
  const std::string song_path = tmp.file("song.wav");
  data::save_audio(song, song_path);

  const auto& params = trained_params();
  std::vector<dsp::Waveform> speech_b;
  speech_b.push_back(testutil::speech_like(0.5, 16000, 74));

  TransferOptions opt;
  opt.gl_iters = 8;
  opt.vocal_gain = 0.9;
  const auto out = transfer_song(song_path, speech_b, params, opt);
  CHECK(out.samples.size() == song.samples.size());
  CHECK(peak(out) <= 1.0 + 1e-12);
  CHECK(all_finite(out));

  unsetenv("SINGIT_SEPARATOR_CMD");
  CHECK_THROWS_AS(transfer_song(song_path, speech_b, params, opt), ConfigError);
}

TEST_CASE("vocoding a clean analysis recovers the dominant pitch") {
  const auto w = testutil::sine_wave(440.0, 0.5, 16000, 0.5);
  dsp::StftConfig cfg;
  const auto x = dsp::mag_to_log(dsp::magnitude(dsp::stft(w, cfg), cfg));

  const auto y = vocode(x, 30, 0, w.size());
  REQUIRE(y.samples.size() == w.samples.size());
  CHECK(peak(y) <= 1.0 + 1e-12);

  // Strongest analysis bin of the resynthesis must be the 440 Hz bin.
  const auto y_mag = dsp::magnitude(dsp::stft(y, cfg), cfg);
  const int want = static_cast<int>(std::lround(440.0 * cfg.n_fft / cfg.sample_rate));
  const int mid = y_mag.values.cols() / 2;
  int got = 0;
  for (int r = 1; r < y_mag.values.rows(); ++r)
    if (y_mag.values(r, mid) > y_mag.values(got, mid)) got = r;
  CHECK(std::abs(got - want) <= 1);

  // Length falls back to full frame coverage when unspecified.
  const auto y0 = vocode(x, 5);
  CHECK(y0.samples.size() ==
        static_cast<std::size_t>((x.values.cols() - 1) * cfg.hop + 1));

  CHECK_THROWS_AS(vocode(x, 0), ConfigError);
}

}  // TEST_SUITE
