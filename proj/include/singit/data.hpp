// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_DATA_HPP
#define SINGIT_DATA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "singit/dsp.hpp"

namespace singit::data {

enum class Kind { Speech, Singing, Vocals, Instrumental };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);

struct ManifestEntry {
  std::string speaker_id;
  std::string utterance_id;
  Kind kind = Kind::Speech;
  std::string path;
  double duration_s = 0.0;

  bool operator==(const ManifestEntry& o) const;
};

using Manifest = std::vector<ManifestEntry>;

// Raw container facts without decoding the payload.
struct WavInfo {
  std::int64_t frames = 0;
  int sample_rate = 0;
  int channels = 0;
  double duration_s() const { return frames / static_cast<double>(sample_rate); }
};

WavInfo wav_info(const std::string& path);

// RIFF/WAVE reader: PCM16 or float32, 1-2 channels, unknown chunks skipped.
// Output is mono (channel mean) at 16 kHz; peak-rescaled only if peak > 1.
dsp::Waveform load_audio(const std::string& path);

// As load_audio but keeps the file's own sample rate.
dsp::Waveform load_audio_native(const std::string& path);

// Mono float32 WAVE.
void save_audio(const dsp::Waveform& w, const std::string& path);

// Windowed-sinc polyphase resampler, 64 taps, per-phase DC normalization.
dsp::Waveform resample(const dsp::Waveform& w, int target_rate);

// One tab-separated record per line: speaker_id, utterance_id, kind, path,
// duration_s. Validation enforces unique (speaker, utterance, kind) and
// positive durations.
void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);
void validate_manifest(const Manifest& m, bool check_paths = false);

struct IngestResult {
  Manifest entries;
  int skipped = 0;  // non-audio files other than kind.tag
};

// Speaker-per-directory layout: each subdirectory of root is one speaker,
// every .wav inside is one utterance. A kind.tag file naming a Kind overrides
// default_kind for that directory.
IngestResult ingest(const std::string& root, Kind default_kind = Kind::Speech);

// Runs the external two-stem separator named by `adapter_cmd`, a command
// template containing {input} and {outdir}. After exit 0 the adapter must
// have written vocals.wav and accompaniment.wav into {outdir}.
std::pair<dsp::Waveform, dsp::Waveform> separate(const std::string& song_path,
                                                 const std::string& adapter_cmd);

// Reads SINGIT_SEPARATOR_CMD for the template.
std::pair<dsp::Waveform, dsp::Waveform> separate(const std::string& song_path);

// gain * vocals + instrumental, shorter input zero-padded; whole mix rescaled
// by 1/peak if peak > 1.
dsp::Waveform remix(const dsp::Waveform& vocals, const dsp::Waveform& instrumental,
                    double vocal_gain = 1.0);

}  // namespace singit::data

#endif  // SINGIT_DATA_HPP
