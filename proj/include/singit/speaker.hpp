// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_SPEAKER_HPP
#define SINGIT_SPEAKER_HPP

#include <functional>
#include <string>
#include <vector>

#include "singit/dsp.hpp"

namespace singit::speaker {

// Fixed-length vocal-identity vector. Unit l2 norm, 256 entries.
struct SpeakerEmbedding {
  std::vector<double> v;

  int dim() const { return static_cast<int>(v.size()); }
  double norm() const;
};

constexpr int kEmbeddingDim = 256;

// A backend maps one waveform to kEmbeddingDim raw values (normalized by the
// caller). Backends must be pure; the registry is process-global.
using EmbedderFn = std::function<std::vector<double>(const dsp::Waveform&)>;

void register_embedder(const std::string& name, EmbedderFn fn);
bool have_embedder(const std::string& name);

// Single utterance -> unit-norm embedding.
// Rejects input shorter than 0.5 s or with RMS below 1e-4.
SpeakerEmbedding embed_utterance(const dsp::Waveform& w, const std::string& backend = "baseline");

// Unit-normalized mean of per-utterance embeddings. A zero-norm mean
// (opposed embeddings) is degenerate.
SpeakerEmbedding embed_speaker(const std::vector<dsp::Waveform>& ws,
                               const std::string& backend = "baseline");

// Raw little-endian float32, exactly kEmbeddingDim values, no header.
void save_embedding(const SpeakerEmbedding& e, const std::string& path);
SpeakerEmbedding load_embedding(const std::string& path);

}  // namespace singit::speaker

#endif  // SINGIT_SPEAKER_HPP
