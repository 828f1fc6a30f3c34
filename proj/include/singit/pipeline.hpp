// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_PIPELINE_HPP
#define SINGIT_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "singit/dsp.hpp"
#include "singit/model.hpp"
#include "singit/speaker.hpp"

namespace singit::pipeline {

struct TransferOptions {
  int gl_iters = 60;
  std::uint64_t gl_seed = 0;
  std::string embed_backend = "baseline";
  // By default the target embedding conditions both encoder and decoder; this
  // switch feeds the encoder the content signal's own embedding instead.
  bool source_embedding_to_encoder = false;
  double vocal_gain = 1.0;
};

// Content from vocals_A rendered in the voice described by e_target.
dsp::Waveform transfer_with_embedding(const dsp::Waveform& vocals_A,
                                      const speaker::SpeakerEmbedding& e_target,
                                      const model::ModelParams& params,
                                      const TransferOptions& opt = {});

// Target embedding computed from one or more of speaker B's utterances.
dsp::Waveform transfer(const dsp::Waveform& vocals_A,
                       const std::vector<dsp::Waveform>& speech_B,
                       const model::ModelParams& params, const TransferOptions& opt = {});

// separate -> transfer the vocal stem -> remix with the instrumental.
dsp::Waveform transfer_song(const std::string& song_path,
                            const std::vector<dsp::Waveform>& speech_B,
                            const model::ModelParams& params, const TransferOptions& opt = {});

// Magnitude (or saved log) spectrogram to audio for quick listening checks.
dsp::Waveform vocode(const dsp::LogSpectrogram& x, int iters = 60, std::uint64_t seed = 0,
                     std::int64_t length = 0);

}  // namespace singit::pipeline

#endif  // SINGIT_PIPELINE_HPP
