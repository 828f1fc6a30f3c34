// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_MODEL_HPP
#define SINGIT_MODEL_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "singit/dsp.hpp"
#include "singit/kernels.hpp"
#include "singit/speaker.hpp"

namespace singit::model {

struct ModelConfig {
  int freq_bins = 256;
  int emb_dim = 256;
  int conv_channels = 512;
  int conv_kernel = 5;
  int enc_lstm_hidden = 32;  // per direction
  int dec_lstm_hidden = 256; // per direction
  int downsample = 32;
  int postnet_layers = 5;

  void validate() const;
  int code_dim() const { return 2 * enc_lstm_hidden; }
  bool operator==(const ModelConfig& o) const;
};

// Downsampled bottleneck sequence: one column per kept frame group.
struct ContentCodes {
  kernels::Mat codes;  // code_dim x ceil(original_T / downsample)
  std::int64_t original_T = 0;
  dsp::StftConfig stft;  // provenance of the analyzed input
};

// Learnable tensors keyed by layer path, plus non-learned batch-norm running
// statistics in `buffers`. `step` counts completed optimizer updates. The
// analysis settings the model was trained against travel with it.
struct ModelParams {
  ModelConfig config;
  dsp::StftConfig stft;
  std::map<std::string, kernels::Tensor> tensors;
  std::map<std::string, kernels::Tensor> buffers;
  std::int64_t step = 0;

  kernels::Tensor& t(const std::string& name);
  const kernels::Tensor& t(const std::string& name) const;
};

using GradStore = std::map<std::string, kernels::Tensor>;

// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except
// LSTM forget gates (+1, the gate starts open); BN scale 1, shift 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Replicates e across time and stacks it under X: (freq_bins+emb_dim) x T.
kernels::Mat concat_embedding(const kernels::Mat& x, const std::vector<double>& e);

// Repeats each code column `downsample` times, trimmed to original_T.
kernels::Mat upsample_codes(const ContentCodes& c, int downsample);

// Inference-mode forward passes (batch-norm running statistics).
ContentCodes encode(const ModelParams& p, const dsp::LogSpectrogram& x,
                    const speaker::SpeakerEmbedding& e);
dsp::LogSpectrogram decode(const ModelParams& p, const ContentCodes& c,
                           const speaker::SpeakerEmbedding& e);
dsp::LogSpectrogram postnet_apply(const ModelParams& p, const dsp::LogSpectrogram& xhat);

// --- Training graph -------------------------------------------------------
// One differentiable pass over a batch: encode -> decode -> postnet, then a
// second encoder pass on the postnet output (same parameters). Batch-norm
// uses batch statistics; running buffers are untouched until
// update_running_stats applies the cached batch moments.

struct TrainBatch {
  std::vector<kernels::Mat> x;               // each freq_bins x T
  std::vector<std::vector<double>> e;        // each emb_dim
};

struct ForwardCache;

struct ForwardResult {
  std::vector<kernels::Mat> xhat;            // decoder outputs
  std::vector<kernels::Mat> xtilde;          // postnet outputs
  std::vector<kernels::Mat> codes_in;        // E(X)
  std::vector<kernels::Mat> codes_out;       // E(postnet output)
  std::shared_ptr<ForwardCache> cache;
};

ForwardResult train_forward(const ModelParams& p, const TrainBatch& batch);

// Momentum-0.1 update of BN running buffers from the pass's batch moments.
void update_running_stats(ModelParams& p, const ForwardResult& f);

// Gradient of w1*L1 + w2*L2 + w3*L3 where L1 = MSE(X, xhat),
// L2 = MSE(X, xtilde), L3 = mean-abs(codes_in, codes_out), each averaged
// over the batch. Unit weights isolate a single loss for checking.
struct LossWeights {
  double w1 = 1.0, w2 = 1.0, w3 = 1.0;
};

GradStore backward(const ModelParams& p, const TrainBatch& batch, const ForwardResult& f,
                   const LossWeights& w);

// Versioned container: structured-text header (config, step, tensor table)
// followed by raw little-endian float32 payloads. save -> load -> save is
// byte-identical.
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace singit::model

#endif  // SINGIT_MODEL_HPP
