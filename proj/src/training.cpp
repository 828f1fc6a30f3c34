// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "singit/speaker.hpp"

namespace singit::training {

using kernels::Mat;
using kernels::Tensor;

void TrainConfig::validate(const model::ModelConfig& m) const {
  if (lambda3 < 0.0) throw ConfigError("TrainConfig: lambda3 must be >= 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (crop_frames < 1 || crop_frames % m.downsample != 0)
    throw ConfigError("TrainConfig: crop_frames must be a positive multiple of downsample");
  if (lr < 0.0) throw ConfigError("TrainConfig: lr must be >= 0");
  if (max_steps < 0) throw ConfigError("TrainConfig: max_steps must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("TrainConfig: checkpoint_every must be >= 0");
}

double loss_l1(const Mat& x, const Mat& xhat) {
  if (!x.same_shape(xhat)) throw ShapeError("loss_l1: shape mismatch");
  return kernels::sum_sq_diff(x, xhat) / x.size();
}

double loss_l2(const Mat& x, const Mat& xtilde) {
  if (!x.same_shape(xtilde)) throw ShapeError("loss_l2: shape mismatch");
  return kernels::sum_sq_diff(x, xtilde) / x.size();
}

double loss_l3(const Mat& codes_in, const Mat& codes_out) {
  if (!codes_in.same_shape(codes_out)) throw ShapeError("loss_l3: shape mismatch");
  return kernels::sum_abs_diff(codes_in, codes_out) / codes_in.size();
}

double total_loss(double l1, double l2, double l3, double lambda3) {
  return l1 + l2 + lambda3 * l3;
}

LossReport compute_losses(const model::TrainBatch& batch, const model::ForwardResult& f,
                          double lambda3) {
  LossReport r;
  const std::size_t B = batch.x.size();
  for (std::size_t i = 0; i < B; ++i) {
    r.l1 += loss_l1(batch.x[i], f.xhat[i]);
    r.l2 += loss_l2(batch.x[i], f.xtilde[i]);
    r.l3 += loss_l3(f.codes_in[i], f.codes_out[i]);
  }
  r.l1 /= B;
  r.l2 /= B;
  r.l3 /= B;
  r.total = total_loss(r.l1, r.l2, r.l3, lambda3);
  return r;
}

void adam_update(model::ModelParams& p, const model::GradStore& g, AdamState& s, double lr) {
  if (s.m.empty()) {
    for (const auto& [name, t] : p.tensors) {
      s.m.emplace(name, Tensor(t.shape));
      s.v.emplace(name, Tensor(t.shape));
    }
  }
  ++s.t;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (auto& [name, t] : p.tensors) {
    const Tensor& grad = g.at(name);
    Tensor& m = s.m.at(name);
    Tensor& v = s.v.at(name);
    kernels::parallel_for(t.size(), [&](std::int64_t i) {
      const std::size_t k = static_cast<std::size_t>(i);
      const double gk = grad.v[k];
      m.v[k] = s.beta1 * m.v[k] + (1.0 - s.beta1) * gk;
      v.v[k] = s.beta2 * v.v[k] + (1.0 - s.beta2) * gk * gk;
      const double mhat = m.v[k] / bc1;
      const double vhat = v.v[k] / bc2;
      t.v[k] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    });
  }
}

LossReport train_step(model::ModelParams& p, const model::TrainBatch& batch,
                      const TrainConfig& cfg, AdamState& state) {
  const model::ForwardResult f = model::train_forward(p, batch);
  const LossReport report = compute_losses(batch, f, cfg.lambda3);
  if (!std::isfinite(report.total) || !std::isfinite(report.l1) || !std::isfinite(report.l2) ||
      !std::isfinite(report.l3))
    throw TrainingError("non-finite loss at step " + std::to_string(p.step + 1) + " (l1=" +
                        std::to_string(report.l1) + ", l2=" + std::to_string(report.l2) +
                        ", l3=" + std::to_string(report.l3) + ")");
  model::LossWeights w;
  w.w1 = 1.0;
  w.w2 = 1.0;
  w.w3 = cfg.lambda3;
  const model::GradStore g = model::backward(p, batch, f, w);
  model::update_running_stats(p, f);
  adam_update(p, g, state, cfg.lr);
  ++p.step;
  return report;
}

std::vector<Utterance> load_dataset(const data::Manifest& manifest) {
  std::vector<Utterance> out;
  for (const auto& e : manifest) {
    if (e.kind != data::Kind::Speech && e.kind != data::Kind::Singing) continue;
    Utterance u;
    u.speaker_id = e.speaker_id;
    u.utterance_id = e.utterance_id;
    u.kind = e.kind;
    u.audio = data::load_audio(e.path);
    out.push_back(std::move(u));
  }
  return out;
}

namespace {

// Edge-replicated column crop of width `frames` starting at `start`.
Mat crop_spec(const Mat& x, int start, int frames) {
  Mat out(x.rows(), frames);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < frames; ++c) {
      const int src = std::min(start + c, x.cols() - 1);
      out(r, c) = x(r, src);
    }
  return out;
}

}  // namespace

TrainResult train_loop(const std::vector<Utterance>& dataset, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, const dsp::StftConfig& scfg,
                       const TrainPaths& paths) {
  mcfg.validate();
  tcfg.validate(mcfg);
  scfg.validate();
  if (dataset.empty()) throw DegenerateInputError("train_loop: empty dataset");

  std::set<data::Kind> kinds;
  for (const auto& u : dataset) kinds.insert(u.kind);
  if (kinds.size() < 2)
    std::fprintf(stderr,
                 "singit: warning: dataset has a single utterance kind; training expects both "
                 "speech and singing\n");

  // Full-utterance features, fixed once per run.
  std::vector<Mat> specs;
  std::vector<std::vector<double>> embeds;
  specs.reserve(dataset.size());
  embeds.reserve(dataset.size());
  for (const auto& u : dataset) {
    const dsp::LogSpectrogram x =
        dsp::mag_to_log(dsp::magnitude(dsp::stft(u.audio, scfg), scfg));
    if (x.values.rows() != mcfg.freq_bins)
      throw ConfigError("train_loop: analysis yields " + std::to_string(x.values.rows()) +
                        " bins but the model expects " + std::to_string(mcfg.freq_bins));
    specs.push_back(x.values);
    embeds.push_back(speaker::embed_utterance(u.audio).v);
  }

  TrainResult res;
  res.params = model::init_params(mcfg, tcfg.seed);
  res.params.stft = scfg;
  if (tcfg.max_steps == 0) return res;

  std::ofstream csv;
  if (!paths.loss_csv.empty()) {
    csv.open(paths.loss_csv);
    if (!csv) throw IoError("cannot open for writing: " + paths.loss_csv);
    csv << "step,l1,l2,l3,total\n";
  }

  Rng rng(tcfg.seed);
  AdamState adam;
  for (std::int64_t step = 1; step <= tcfg.max_steps; ++step) {
    model::TrainBatch batch;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const std::int64_t u = rng.uniform_int(static_cast<std::int64_t>(dataset.size()));
      const Mat& spec = specs[static_cast<std::size_t>(u)];
      int start = 0;
      if (spec.cols() > tcfg.crop_frames)
        start = static_cast<int>(rng.uniform_int(spec.cols() - tcfg.crop_frames + 1));
      batch.x.push_back(crop_spec(spec, start, tcfg.crop_frames));
      batch.e.push_back(embeds[static_cast<std::size_t>(u)]);
    }
    const LossReport r = train_step(res.params, batch, tcfg, adam);
    res.curve.push_back(r);
    if (csv.is_open()) {
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(step), r.l1, r.l2, r.l3, r.total);
      csv << line;
    }
    if (tcfg.checkpoint_every > 0 && !paths.checkpoint_dir.empty() &&
        step % tcfg.checkpoint_every == 0) {
      const std::filesystem::path dir(paths.checkpoint_dir);
      std::filesystem::create_directories(dir);
      model::save_checkpoint(res.params, (dir / ("ckpt_" + std::to_string(step) + ".ckpt")).string());
    }
  }
  return res;
}

}  // namespace singit::training
