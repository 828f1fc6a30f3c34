// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/pipeline.hpp"

#include <algorithm>
#include <cstdio>

#include "singit/data.hpp"

namespace singit::pipeline {

dsp::Waveform transfer_with_embedding(const dsp::Waveform& vocals_A,
                                      const speaker::SpeakerEmbedding& e_target,
                                      const model::ModelParams& params,
                                      const TransferOptions& opt) {
  params.config.validate();
  const dsp::StftConfig& cfg = params.stft;
  cfg.validate();
  if (params.step == 0)
    std::fprintf(stderr, "singit: warning: model has no training steps; output will be noise\n");
  if (vocals_A.sample_rate != cfg.sample_rate)
    throw ValidationError("transfer: input sample rate " + std::to_string(vocals_A.sample_rate) +
                          " does not match the model's " + std::to_string(cfg.sample_rate));

  const dsp::LogSpectrogram x_a =
      dsp::mag_to_log(dsp::magnitude(dsp::stft(vocals_A, cfg), cfg));

  const speaker::SpeakerEmbedding& e_enc =
      opt.source_embedding_to_encoder
          ? speaker::embed_utterance(vocals_A, opt.embed_backend)
          : e_target;
  const model::ContentCodes codes = model::encode(params, x_a, e_enc);
  const dsp::LogSpectrogram xhat = model::decode(params, codes, e_target);
  dsp::LogSpectrogram xtilde = model::postnet_apply(params, xhat);

  // The net is unbounded; clip back into the log scale's domain before
  // inverting it.
  for (std::int64_t i = 0; i < xtilde.values.size(); ++i)
    xtilde.values.data()[i] = std::clamp(xtilde.values.data()[i], 0.0, 1.0);

  dsp::GriffinLimOptions gl;
  gl.iters = opt.gl_iters;
  gl.seed = opt.gl_seed;
  gl.length = vocals_A.size();
  return dsp::griffin_lim(dsp::log_to_mag(xtilde), gl);
}

dsp::Waveform transfer(const dsp::Waveform& vocals_A, const std::vector<dsp::Waveform>& speech_B,
                       const model::ModelParams& params, const TransferOptions& opt) {
  const speaker::SpeakerEmbedding e_b = speaker::embed_speaker(speech_B, opt.embed_backend);
  return transfer_with_embedding(vocals_A, e_b, params, opt);
}

dsp::Waveform transfer_song(const std::string& song_path,
                            const std::vector<dsp::Waveform>& speech_B,
                            const model::ModelParams& params, const TransferOptions& opt) {
  auto [vocals, instrumental] = data::separate(song_path);
  const dsp::Waveform converted = transfer(vocals, speech_B, params, opt);
  return data::remix(converted, instrumental, opt.vocal_gain);
}

dsp::Waveform vocode(const dsp::LogSpectrogram& x, int iters, std::uint64_t seed,
                     std::int64_t length) {
  dsp::GriffinLimOptions gl;
  gl.iters = iters;
  gl.seed = seed;
  gl.length = length;
  return dsp::griffin_lim(dsp::log_to_mag(x), gl);
}

}  // namespace singit::pipeline
