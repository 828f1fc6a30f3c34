// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/speaker.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>

namespace singit::speaker {

namespace {

std::mutex g_registry_mutex;

std::map<std::string, EmbedderFn>& registry() {
  static std::map<std::string, EmbedderFn> r;
  return r;
}

// Long-term average of the log-spectrogram, one value per frequency bin.
// Deterministic and training-free; a learned verifier can replace it behind
// the same registry entry.
std::vector<double> baseline_embed(const dsp::Waveform& w) {
  dsp::StftConfig cfg;
  cfg.sample_rate = w.sample_rate;
  const dsp::LogSpectrogram x = dsp::mag_to_log(dsp::magnitude(dsp::stft(w, cfg), cfg));
  const int bins = x.values.rows();
  const int frames = x.values.cols();
  std::vector<double> out(static_cast<std::size_t>(bins), 0.0);
  for (int r = 0; r < bins; ++r) {
    double acc = 0.0;
    for (int c = 0; c < frames; ++c) acc += x.values(r, c);
    out[static_cast<std::size_t>(r)] = acc / frames;
  }
  return out;
}

struct RegisterBaseline {
  RegisterBaseline() { registry()["baseline"] = baseline_embed; }
} g_register_baseline;

SpeakerEmbedding normalize_or_throw(std::vector<double> v, const char* what) {
  if (static_cast<int>(v.size()) != kEmbeddingDim)
    throw ShapeError(std::string(what) + ": embedding dimension " + std::to_string(v.size()) +
                     ", expected " + std::to_string(kEmbeddingDim));
  double ss = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw DegenerateInputError(std::string(what) + ": non-finite entry");
    ss += x * x;
  }
  const double n = std::sqrt(ss);
  if (n < 1e-12) throw DegenerateInputError(std::string(what) + ": zero-norm embedding");
  for (double& x : v) x /= n;
  return SpeakerEmbedding{std::move(v)};
}

}  // namespace

double SpeakerEmbedding::norm() const {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

void register_embedder(const std::string& name, EmbedderFn fn) {
  std::lock_guard<std::mutex> lock(g_registry_mutex);
  registry()[name] = std::move(fn);
}

bool have_embedder(const std::string& name) {
  std::lock_guard<std::mutex> lock(g_registry_mutex);
  return registry().count(name) > 0;
}

SpeakerEmbedding embed_utterance(const dsp::Waveform& w, const std::string& backend) {
  EmbedderFn fn;
  {
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    auto it = registry().find(backend);
    if (it == registry().end()) throw ConfigError("unknown embedder backend: " + backend);
    fn = it->second;
  }
  if (w.sample_rate <= 0) throw DegenerateInputError("embed_utterance: bad sample rate");
  if (w.duration_s() < 0.5)
    throw DegenerateInputError("embed_utterance: input shorter than 0.5 s");
  double ss = 0.0;
  for (double s : w.samples) ss += s * s;
  const double rms = std::sqrt(ss / w.samples.size());
  if (rms < 1e-4) throw DegenerateInputError("embed_utterance: input is silent (rms < 1e-4)");
  return normalize_or_throw(fn(w), "embed_utterance");
}

SpeakerEmbedding embed_speaker(const std::vector<dsp::Waveform>& ws, const std::string& backend) {
  if (ws.empty()) throw DegenerateInputError("embed_speaker: no utterances");
  std::vector<double> mean(static_cast<std::size_t>(kEmbeddingDim), 0.0);
  for (const auto& w : ws) {
    const SpeakerEmbedding e = embed_utterance(w, backend);
    for (int i = 0; i < kEmbeddingDim; ++i) mean[static_cast<std::size_t>(i)] += e.v[static_cast<std::size_t>(i)];
  }
  for (double& x : mean) x /= ws.size();
  return normalize_or_throw(std::move(mean), "embed_speaker");
}

void save_embedding(const SpeakerEmbedding& e, const std::string& path) {
  if (e.dim() != kEmbeddingDim) throw ShapeError("save_embedding: wrong dimension");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  float buf[kEmbeddingDim];
  for (int i = 0; i < kEmbeddingDim; ++i) buf[i] = static_cast<float>(e.v[static_cast<std::size_t>(i)]);
  f.write(reinterpret_cast<const char*>(buf), sizeof(buf));
  if (!f) throw IoError("write failed: " + path);
}

SpeakerEmbedding load_embedding(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  float buf[kEmbeddingDim];
  f.read(reinterpret_cast<char*>(buf), sizeof(buf));
  if (f.gcount() != sizeof(buf)) throw IoError("embedding file too short: " + path);
  char extra;
  if (f.read(&extra, 1)) throw IoError("embedding file too long: " + path);
  std::vector<double> v(static_cast<std::size_t>(kEmbeddingDim));
  for (int i = 0; i < kEmbeddingDim; ++i) v[static_cast<std::size_t>(i)] = buf[i];
  return normalize_or_throw(std::move(v), "load_embedding");
}

}  // namespace singit::speaker
