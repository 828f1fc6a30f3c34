// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_TRAINING_HPP
#define SINGIT_TRAINING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "singit/data.hpp"
#include "singit/kernels.hpp"
#include "singit/model.hpp"

namespace singit::training {

struct TrainConfig {
  double lambda3 = 10000.0;
  int crop_frames = 128;
  int batch_size = 2;
  double lr = 1e-4;
  std::int64_t max_steps = 0;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate(const model::ModelConfig& m) const;
};

struct LossReport {
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, total = 0.0;
};

// Mean squared entrywise difference.
double loss_l1(const kernels::Mat& x, const kernels::Mat& xhat);
double loss_l2(const kernels::Mat& x, const kernels::Mat& xtilde);
// Mean absolute difference between the two encoder outputs.
double loss_l3(const kernels::Mat& codes_in, const kernels::Mat& codes_out);
// l1 + l2 + lambda3 * l3, in exactly this order.
double total_loss(double l1, double l2, double l3, double lambda3);

// Batch losses: mean over samples of the per-sample loss.
LossReport compute_losses(const model::TrainBatch& batch, const model::ForwardResult& f,
                          double lambda3);

// Adam moment buffers, one pair per learnable tensor.
struct AdamState {
  std::map<std::string, kernels::Tensor> m, v;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void adam_update(model::ModelParams& p, const model::GradStore& g, AdamState& s, double lr);

// One optimizer step on the batch; the report holds pre-update losses.
LossReport train_step(model::ModelParams& p, const model::TrainBatch& batch,
                      const TrainConfig& cfg, AdamState& state);

// One training utterance: audio plus identity, spectrogram and embedding
// computed once up front by the loop.
struct Utterance {
  std::string speaker_id;
  std::string utterance_id;
  data::Kind kind = data::Kind::Speech;
  dsp::Waveform audio;
};

struct TrainPaths {
  std::string loss_csv;        // append-only "step,l1,l2,l3,total"; empty disables
  std::string checkpoint_dir;  // receives ckpt_<step>.ckpt; empty disables
};

struct TrainResult {
  model::ModelParams params;
  std::vector<LossReport> curve;  // one entry per step
};

// Self-reconstruction loop: uniformly samples utterances (any kind), crops
// crop_frames with a uniform start, pairs each crop with its own speaker's
// full-utterance embedding.
TrainResult train_loop(const std::vector<Utterance>& dataset, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, const dsp::StftConfig& scfg,
                       const TrainPaths& paths = {});

// Loads manifest rows of kind speech/singing into training utterances.
std::vector<Utterance> load_dataset(const data::Manifest& manifest);

}  // namespace singit::training

#endif  // SINGIT_TRAINING_HPP
