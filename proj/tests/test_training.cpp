// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "singit/data.hpp"
#include "singit/training.hpp"
#include "test_util.hpp"

using namespace singit;
using namespace singit::training;

namespace {

kernels::Mat random_mat(int rows, int cols, std::uint64_t seed) {
  kernels::Mat m(rows, cols);
  Rng rng(seed);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
  return m;
}

// Reduced dimensions keep the finite-difference sweep fast while exercising
// every layer type.
model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.freq_bins = 6;
  cfg.emb_dim = 4;
  cfg.conv_channels = 5;
  cfg.conv_kernel = 3;
  cfg.enc_lstm_hidden = 2;
  cfg.dec_lstm_hidden = 3;
  cfg.downsample = 4;
  cfg.postnet_layers = 2;
  return cfg;
}

model::TrainBatch tiny_batch(const model::ModelConfig& cfg, std::uint64_t seed) {
  model::TrainBatch batch;
  Rng rng(seed);
  for (int t : {8, 6}) {
    kernels::Mat x(cfg.freq_bins, t);
    for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    batch.x.push_back(std::move(x));
    std::vector<double> e(static_cast<std::size_t>(cfg.emb_dim));
    double n2 = 0.0;
    for (auto& v : e) {
      v = rng.normal();
      n2 += v * v;
    }
    for (auto& v : e) v /= std::sqrt(n2);
    batch.e.push_back(std::move(e));
  }
  return batch;
}

double weighted_loss(const model::ModelParams& p, const model::TrainBatch& batch,
                     const model::LossWeights& w) {
  const auto f = model::train_forward(p, batch);
  const auto r = compute_losses(batch, f, 1.0);
  return w.w1 * r.l1 + w.w2 * r.l2 + w.w3 * r.l3;
}

dsp::Waveform shifted_tone(double freq, double secs, std::uint64_t seed) {
  auto w = testutil::speech_like(secs, 16000, seed);
  const auto tone = testutil::sine_wave(freq, secs, 16000, 0.1);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] += tone.samples[i];
  return w;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation rejects out-of-range values") {
  const auto mcfg = tiny_config();
  TrainConfig t;
  t.crop_frames = 16;
  CHECK_NOTHROW(t.validate(mcfg));
  auto bad = t;
  bad.lambda3 = -1.0;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.crop_frames = 0;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.crop_frames = 13;  // not a multiple of downsample 4
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.lr = -1e-4;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.max_steps = -1;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
  bad = t;
  bad.checkpoint_every = -1;
  CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
}

TEST_CASE("losses match naive loop oracles") {
  const auto a = random_mat(7, 9, 1);
  const auto b = random_mat(7, 9, 2);

  double sq = 0.0, ab = 0.0;
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 9; ++c) {
      const double d = a(r, c) - b(r, c);
      sq += d * d;
      ab += std::fabs(d);
    }
  const double mse = sq / 63.0;
  const double mae = ab / 63.0;

  CHECK(loss_l1(a, b) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(loss_l2(a, b) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(loss_l3(a, b) == doctest::Approx(mae).epsilon(1e-12));
  CHECK(loss_l1(a, a) == 0.0);
  CHECK(loss_l3(a, a) == 0.0);

  const auto c = random_mat(7, 8, 3);
  CHECK_THROWS_AS(loss_l1(a, c), ShapeError);
  CHECK_THROWS_AS(loss_l2(a, c), ShapeError);
  CHECK_THROWS_AS(loss_l3(a, c), ShapeError);
}

TEST_CASE("total loss combines the terms in the documented order") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const double l1 = rng.uniform(), l2 = rng.uniform(), l3 = rng.uniform();
    const double lambda3 = rng.uniform(0.0, 20000.0);
    CHECK(total_loss(l1, l2, l3, lambda3) == l1 + l2 + lambda3 * l3);
  }
}

TEST_CASE("batch losses average the per-sample losses") {
  model::TrainBatch batch;
  batch.x.push_back(random_mat(4, 6, 5));
  batch.x.push_back(random_mat(4, 3, 6));
  batch.e.resize(2);

  model::ForwardResult f;
  f.xhat.push_back(random_mat(4, 6, 7));
  f.xhat.push_back(random_mat(4, 3, 8));
  f.xtilde.push_back(random_mat(4, 6, 9));
  f.xtilde.push_back(random_mat(4, 3, 10));
  f.codes_in.push_back(random_mat(2, 2, 11));
  f.codes_in.push_back(random_mat(2, 1, 12));
  f.codes_out.push_back(random_mat(2, 2, 13));
  f.codes_out.push_back(random_mat(2, 1, 14));

  const double lambda3 = 123.5;
  const auto r = compute_losses(batch, f, lambda3);
  const double l1 = 0.5 * (loss_l1(batch.x[0], f.xhat[0]) + loss_l1(batch.x[1], f.xhat[1]));
  const double l2 = 0.5 * (loss_l2(batch.x[0], f.xtilde[0]) + loss_l2(batch.x[1], f.xtilde[1]));
  const double l3 = 0.5 * (loss_l3(f.codes_in[0], f.codes_out[0]) +
                           loss_l3(f.codes_in[1], f.codes_out[1]));
  CHECK(r.l1 == doctest::Approx(l1).epsilon(1e-12));
  CHECK(r.l2 == doctest::Approx(l2).epsilon(1e-12));
  CHECK(r.l3 == doctest::Approx(l3).epsilon(1e-12));
  CHECK(r.total == total_loss(r.l1, r.l2, r.l3, lambda3));
}

TEST_CASE("adam update follows the moment recursion exactly") {
  model::ModelParams p;
  p.tensors.emplace("w", kernels::Tensor({2}));
  p.t("w").v = {1.0, -2.0};

  model::GradStore g;
  g.emplace("w", kernels::Tensor({2}));
  g.at("w").v = {0.5, -0.25};

  AdamState s;
  const double lr = 0.1;

  double m[2] = {0.0, 0.0}, v[2] = {0.0, 0.0}, x[2] = {1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    adam_update(p, g, s, lr);
    CHECK(s.t == step);
    const double bc1 = 1.0 - std::pow(0.9, step);
    const double bc2 = 1.0 - std::pow(0.999, step);
    for (int k = 0; k < 2; ++k) {
      const double gk = g.at("w").v[static_cast<std::size_t>(k)];
      m[k] = 0.9 * m[k] + 0.1 * gk;
      v[k] = 0.999 * v[k] + 0.001 * gk * gk;
      x[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + 1e-8);
      CHECK(p.t("w").v[static_cast<std::size_t>(k)] == doctest::Approx(x[k]).epsilon(1e-14));
    }
  }

  // Zero learning rate never moves the parameters.
  model::ModelParams q;
  q.tensors.emplace("w", kernels::Tensor({2}));
  q.t("w").v = {3.0, 4.0};
  AdamState s0;
  adam_update(q, g, s0, 0.0);
  CHECK(q.t("w").v[0] == 3.0);
  CHECK(q.t("w").v[1] == 4.0);
  CHECK(s0.t == 1);
}

TEST_CASE("analytic gradients match central finite differences per loss term") {
  const auto cfg = tiny_config();
  auto p = model::init_params(cfg, 97);
  const auto batch = tiny_batch(cfg, 42);
  const double h = 1e-5;

  model::LossWeights weights[3];
  weights[0] = {1.0, 0.0, 0.0};
  weights[1] = {0.0, 1.0, 0.0};
  weights[2] = {0.0, 0.0, 1.0};

  for (const auto& w : weights) {
    const auto f = model::train_forward(p, batch);
    const auto analytic = model::backward(p, batch, f, w);
    double worst = 0.0;
    std::string worst_name;
    for (auto& [name, t] : p.tensors) {
      const auto& ga = analytic.at(name);
      for (std::int64_t i = 0; i < t.size(); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double saved = t.v[k];
        t.v[k] = saved + h;
        const double fp = weighted_loss(p, batch, w);
        t.v[k] = saved - h;
        const double fm = weighted_loss(p, batch, w);
        t.v[k] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = ga.v[k];
        const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
        if (rel > worst) {
          worst = rel;
          worst_name = name + "[" + std::to_string(i) + "]";
        }
      }
    }
    INFO("worst parameter: ", worst_name, " weights (", w.w1, ",", w.w2, ",", w.w3, ")");
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("train step reports pre-update losses and advances the step counter") {
  const auto cfg = tiny_config();
  auto p = model::init_params(cfg, 5);
  const auto batch = tiny_batch(cfg, 6);

  TrainConfig tcfg;
  tcfg.crop_frames = 8;
  tcfg.lambda3 = 10.0;
  tcfg.lr = 1e-3;

  const auto before = compute_losses(batch, model::train_forward(p, batch), tcfg.lambda3);
  AdamState s;
  const auto r = train_step(p, batch, tcfg, s);
  CHECK(r.l1 == before.l1);
  CHECK(r.l2 == before.l2);
  CHECK(r.l3 == before.l3);
  CHECK(r.total == before.total);
  CHECK(p.step == 1);
  CHECK(std::isfinite(r.total));

  // A second step sees the moved parameters.
  const auto r2 = train_step(p, batch, tcfg, s);
  CHECK(p.step == 2);
  CHECK(r2.total != r.total);
}

TEST_CASE("zero learning rate leaves learnables bitwise intact") {
  const auto cfg = tiny_config();
  auto p = model::init_params(cfg, 8);
  const auto reference = model::init_params(cfg, 8);
  const auto batch = tiny_batch(cfg, 9);

  TrainConfig tcfg;
  tcfg.crop_frames = 8;
  tcfg.lr = 0.0;
  AdamState s;
  (void)train_step(p, batch, tcfg, s);

  for (const auto& [name, t] : p.tensors) {
    const auto& u = reference.tensors.at(name);
    for (std::int64_t i = 0; i < t.size(); ++i)
      CHECK(t.v[static_cast<std::size_t>(i)] == u.v[static_cast<std::size_t>(i)]);
  }
  // Running statistics still track the batch.
  double moved = 0.0;
  for (const auto& [name, buf] : p.buffers) {
    const auto& u = reference.buffers.at(name);
    for (std::int64_t i = 0; i < buf.size(); ++i)
      moved = std::max(moved,
                       std::fabs(buf.v[static_cast<std::size_t>(i)] - u.v[static_cast<std::size_t>(i)]));
  }
  CHECK(moved > 0.0);
  CHECK(p.step == 1);
}

TEST_CASE("dataset loading keeps only speech and singing") {
  testutil::TempDir tmp;
  const auto w1 = testutil::speech_like(0.3, 16000, 1);
  const auto w2 = testutil::sine_wave(220.0, 0.3, 16000, 0.4);
  data::save_audio(w1, tmp.file("a.wav"));
  data::save_audio(w2, tmp.file("b.wav"));
  data::save_audio(w1, tmp.file("c.wav"));
  data::save_audio(w2, tmp.file("d.wav"));

  data::Manifest m;
  m.push_back({"alice", "a", data::Kind::Speech, tmp.file("a.wav"), 0.3});
  m.push_back({"bob", "b", data::Kind::Vocals, tmp.file("b.wav"), 0.3});
  m.push_back({"carol", "c", data::Kind::Singing, tmp.file("c.wav"), 0.3});
  m.push_back({"dave", "d", data::Kind::Instrumental, tmp.file("d.wav"), 0.3});

  const auto ds = load_dataset(m);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].speaker_id == "alice");
  CHECK(ds[0].kind == data::Kind::Speech);
  CHECK(ds[0].audio.samples.size() == w1.samples.size());
  CHECK(ds[1].speaker_id == "carol");
  CHECK(ds[1].kind == data::Kind::Singing);
}

TEST_CASE("training loop is deterministic and honors paths") {
  model::ModelConfig mcfg;
  mcfg.freq_bins = 256;
  mcfg.emb_dim = 256;
  mcfg.conv_channels = 8;
  mcfg.conv_kernel = 3;
  mcfg.enc_lstm_hidden = 2;
  mcfg.dec_lstm_hidden = 4;
  mcfg.downsample = 4;
  mcfg.postnet_layers = 2;

  TrainConfig tcfg;
  tcfg.crop_frames = 16;
  tcfg.batch_size = 2;
  tcfg.lr = 1e-3;
  tcfg.lambda3 = 10.0;
  tcfg.seed = 77;
  tcfg.max_steps = 6;
  tcfg.checkpoint_every = 2;

  dsp::StftConfig scfg;

  std::vector<Utterance> ds;
  ds.push_back({"alice", "u1", data::Kind::Speech, shifted_tone(150.0, 0.5, 21)});
  ds.push_back({"bob", "u2", data::Kind::Singing, shifted_tone(260.0, 0.5, 22)});

  testutil::TempDir tmp;
  TrainPaths paths;
  paths.loss_csv = tmp.file("loss.csv");
  paths.checkpoint_dir = tmp.file("ckpts");

  const auto r1 = train_loop(ds, mcfg, tcfg, scfg, paths);
  const auto r2 = train_loop(ds, mcfg, tcfg, scfg);
  REQUIRE(r1.curve.size() == 6);
  REQUIRE(r2.curve.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r1.curve[i].l1 == r2.curve[i].l1);
    CHECK(r1.curve[i].l2 == r2.curve[i].l2);
    CHECK(r1.curve[i].l3 == r2.curve[i].l3);
    CHECK(r1.curve[i].total == r2.curve[i].total);
    CHECK(std::isfinite(r1.curve[i].total));
  }
  CHECK(r1.params.step == 6);
  CHECK(r1.params.stft == scfg);

  // Same seed, same bytes on disk.
  const std::string c1 = tmp.file("r1.ckpt"), c2 = tmp.file("r2.ckpt");
  model::save_checkpoint(r1.params, c1);
  model::save_checkpoint(r2.params, c2);
  std::ifstream f1(c1, std::ios::binary), f2(c2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(b1.size() == b2.size());
  CHECK(std::equal(b1.begin(), b1.end(), b2.begin()));

  // A different seed moves the curve.
  auto other = tcfg;
  other.seed = 78;
  const auto r3 = train_loop(ds, mcfg, other, scfg);
  CHECK(r3.curve[5].total != r1.curve[5].total);

  // Checkpoint cadence: steps 2, 4, 6.
  namespace fs = std::filesystem;
  CHECK(fs::exists(fs::path(paths.checkpoint_dir) / "ckpt_2.ckpt"));
  CHECK(fs::exists(fs::path(paths.checkpoint_dir) / "ckpt_4.ckpt"));
  CHECK(fs::exists(fs::path(paths.checkpoint_dir) / "ckpt_6.ckpt"));
  CHECK_FALSE(fs::exists(fs::path(paths.checkpoint_dir) / "ckpt_1.ckpt"));
  CHECK_FALSE(fs::exists(fs::path(paths.checkpoint_dir) / "ckpt_3.ckpt"));

  // Loss log: header plus one %.17g row per step, matching the curve exactly.
  std::ifstream csv(paths.loss_csv);
  REQUIRE(csv.good());
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "step,l1,l2,l3,total");
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(std::stoll(field) == rows + 1);
    double vals[4];
    for (double& v : vals) {
      REQUIRE(std::getline(ss, field, ','));
      v = std::stod(field);
    }
    CHECK(vals[0] == r1.curve[static_cast<std::size_t>(rows)].l1);
    CHECK(vals[3] == r1.curve[static_cast<std::size_t>(rows)].total);
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("zero max steps returns the initialization untouched") {
  model::ModelConfig mcfg;
  mcfg.freq_bins = 256;
  mcfg.emb_dim = 256;
  mcfg.conv_channels = 4;
  mcfg.conv_kernel = 3;
  mcfg.enc_lstm_hidden = 2;
  mcfg.dec_lstm_hidden = 2;
  mcfg.downsample = 4;
  mcfg.postnet_layers = 2;
  TrainConfig tcfg;
  tcfg.crop_frames = 8;
  tcfg.max_steps = 0;
  dsp::StftConfig scfg;
  std::vector<Utterance> ds;
  ds.push_back({"alice", "u1", data::Kind::Speech, testutil::speech_like(0.6, 16000, 31)});

  testutil::TempDir tmp;
  TrainPaths paths;
  paths.loss_csv = tmp.file("loss.csv");
  const auto r = train_loop(ds, mcfg, tcfg, scfg, paths);
  CHECK(r.curve.empty());
  CHECK(r.params.step == 0);
  CHECK_FALSE(std::filesystem::exists(paths.loss_csv));

  CHECK_THROWS_AS(train_loop({}, mcfg, tcfg, scfg), DegenerateInputError);
}

}  // TEST_SUITE
