// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/data.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "singit/kernels.hpp"

namespace fs = std::filesystem;

namespace singit::data {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

// --- WAVE container --------------------------------------------------------

std::uint32_t rd_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t rd_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

struct WavData {
  int sample_rate = 0;
  int channels = 0;
  int format = 0;  // 1 PCM, 3 IEEE float
  int bits = 0;
  std::vector<std::uint8_t> payload;
};

WavData parse_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  WavData w;
  bool have_fmt = false, have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const std::uint32_t sz = rd_u32(raw.data() + pos + 4);
    pos += 8;
    if (pos + sz > raw.size()) throw IoError("truncated file: " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw IoError("malformed fmt chunk: " + path);
      w.format = rd_u16(raw.data() + pos);
      w.channels = rd_u16(raw.data() + pos + 2);
      w.sample_rate = static_cast<int>(rd_u32(raw.data() + pos + 4));
      w.bits = rd_u16(raw.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      w.payload.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos),
                       raw.begin() + static_cast<std::ptrdiff_t>(pos + sz));
      have_data = true;
    }
    pos += sz + (sz & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data) throw IoError("missing fmt or data chunk: " + path);
  if (w.channels < 1 || w.channels > 2)
    throw IoError("unsupported channel count " + std::to_string(w.channels) + ": " + path);
  if (w.sample_rate <= 0) throw IoError("bad sample rate: " + path);
  const bool pcm16 = w.format == 1 && w.bits == 16;
  const bool f32 = w.format == 3 && w.bits == 32;
  if (!pcm16 && !f32)
    throw IoError("unsupported encoding (need PCM16 or float32): " + path);
  return w;
}

// Mono by channel mean.
dsp::Waveform decode_wav(const std::string& path) {
  const WavData w = parse_wav(path);
  const int bytes_per = w.bits / 8;
  const std::int64_t values = static_cast<std::int64_t>(w.payload.size()) / bytes_per;
  const std::int64_t frames = values / w.channels;
  dsp::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(static_cast<std::size_t>(frames));
  const std::uint8_t* p = w.payload.data();
  for (std::int64_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < w.channels; ++ch) {
      const std::uint8_t* s = p + (i * w.channels + ch) * bytes_per;
      if (w.format == 1) {
        const std::int16_t v = static_cast<std::int16_t>(rd_u16(s));
        acc += v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += v;
      }
    }
    out.samples[static_cast<std::size_t>(i)] = acc / w.channels;
  }
  return out;
}

void rescale_if_clipping(dsp::Waveform& w) {
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 1.0) {
    const double g = 1.0 / peak;
    for (double& s : w.samples) s *= g;
  }
}

void wr_u32(std::ofstream& f, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}
void wr_u16(std::ofstream& f, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

// --- Manifest --------------------------------------------------------------

void check_field(const std::string& s, const char* what) {
  if (s.empty()) throw ValidationError(std::string("manifest: empty ") + what);
  if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
    throw ValidationError(std::string("manifest: tab or newline in ") + what + ": " + s);
}

// --- Separator adapter -----------------------------------------------------

std::string substitute_all(std::string s, const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = s.find(key, pos)) != std::string::npos) {
    s.replace(pos, key.size(), value);
    pos += value.size();
  }
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::Speech: return "speech";
    case Kind::Singing: return "singing";
    case Kind::Vocals: return "vocals";
    case Kind::Instrumental: return "instrumental";
  }
  throw ValidationError("unknown kind value");
}

Kind parse_kind(const std::string& s) {
  if (s == "speech") return Kind::Speech;
  if (s == "singing") return Kind::Singing;
  if (s == "vocals") return Kind::Vocals;
  if (s == "instrumental") return Kind::Instrumental;
  throw ValidationError("unknown kind: " + s);
}

bool ManifestEntry::operator==(const ManifestEntry& o) const {
  return speaker_id == o.speaker_id && utterance_id == o.utterance_id && kind == o.kind &&
         path == o.path && duration_s == o.duration_s;
}

WavInfo wav_info(const std::string& path) {
  const WavData w = parse_wav(path);
  WavInfo info;
  info.sample_rate = w.sample_rate;
  info.channels = w.channels;
  info.frames = static_cast<std::int64_t>(w.payload.size()) / (w.bits / 8) / w.channels;
  return info;
}

dsp::Waveform load_audio_native(const std::string& path) {
  dsp::Waveform w = decode_wav(path);
  rescale_if_clipping(w);
  return w;
}

dsp::Waveform load_audio(const std::string& path) {
  dsp::Waveform w = decode_wav(path);
  w = resample(w, 16000);
  rescale_if_clipping(w);
  return w;
}

void save_audio(const dsp::Waveform& w, const std::string& path) {
  if (w.sample_rate <= 0) throw ValidationError("save_audio: bad sample rate");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = n * 4;
  // fmt (18) + fact (4) + data, IEEE float mono.
  f.write("RIFF", 4);
  wr_u32(f, 4 + 8 + 18 + 8 + 4 + 8 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 18);
  wr_u16(f, 3);
  wr_u16(f, 1);
  wr_u32(f, static_cast<std::uint32_t>(w.sample_rate));
  wr_u32(f, static_cast<std::uint32_t>(w.sample_rate) * 4);
  wr_u16(f, 4);
  wr_u16(f, 32);
  wr_u16(f, 0);
  f.write("fact", 4);
  wr_u32(f, 4);
  wr_u32(f, n);
  f.write("data", 4);
  wr_u32(f, data_bytes);
  std::vector<float> buf(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) buf[i] = static_cast<float>(w.samples[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(data_bytes));
  if (!f) throw IoError("write failed: " + path);
}

dsp::Waveform resample(const dsp::Waveform& w, int target_rate) {
  if (target_rate <= 0) throw ValidationError("resample: bad target rate");
  if (w.sample_rate <= 0) throw ValidationError("resample: source has no sample rate");
  if (w.sample_rate == target_rate) return w;
  if (w.samples.empty()) return dsp::Waveform{{}, target_rate};

  const std::int64_t g = std::gcd<std::int64_t>(w.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;
  const std::int64_t down = w.sample_rate / g;

  constexpr int kTaps = 64;
  constexpr int kHalf = kTaps / 2;
  const double fc = 0.95 * std::min(1.0, static_cast<double>(up) / down);

  // Blackman-windowed sinc, argument in source-sample units.
  auto proto = [&](double t) {
    if (std::fabs(t) >= kHalf) return 0.0;
    const double s = t == 0.0 ? fc : std::sin(kPi * fc * t) / (kPi * t);
    const double u = t / kHalf;  // in (-1, 1)
    const double win = 0.42 + 0.5 * std::cos(kPi * u) + 0.08 * std::cos(2.0 * kPi * u);
    return s * win;
  };

  // One normalized tap row per output phase; phases cycle with period `up`.
  std::vector<double> taps;
  const bool tabulate = up <= 1024;
  if (tabulate) {
    taps.resize(static_cast<std::size_t>(up) * kTaps);
    for (std::int64_t p = 0; p < up; ++p) {
      const double frac = static_cast<double>(p) / up;
      double sum = 0.0;
      for (int j = 0; j < kTaps; ++j) {
        const double v = proto(frac + kHalf - 1 - j);
        taps[static_cast<std::size_t>(p) * kTaps + j] = v;
        sum += v;
      }
      for (int j = 0; j < kTaps; ++j) taps[static_cast<std::size_t>(p) * kTaps + j] /= sum;
    }
  }

  const std::int64_t src_len = w.size();
  const std::int64_t out_len = (src_len * up + down - 1) / down;
  dsp::Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));

  kernels::parallel_for(out_len, [&](std::int64_t n) {
    const std::int64_t num = n * down;
    const std::int64_t base = num / up;
    const std::int64_t phase = num % up;
    const double* row = nullptr;
    double local[kTaps];
    if (tabulate) {
      row = taps.data() + phase * kTaps;
    } else {
      const double frac = static_cast<double>(phase) / up;
      double sum = 0.0;
      for (int j = 0; j < kTaps; ++j) {
        local[j] = proto(frac + kHalf - 1 - j);
        sum += local[j];
      }
      for (int j = 0; j < kTaps; ++j) local[j] /= sum;
      row = local;
    }
    double acc = 0.0;
    for (int j = 0; j < kTaps; ++j) {
      const std::int64_t k = base - kHalf + 1 + j;
      if (k >= 0 && k < src_len) acc += row[j] * w.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  });
  return out;
}

void save_manifest(const Manifest& m, const std::string& path) {
  validate_manifest(m);
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& e : m) {
    char dur[32];
    std::snprintf(dur, sizeof(dur), "%.6f", e.duration_s);
    f << e.speaker_id << '\t' << e.utterance_id << '\t' << kind_name(e.kind) << '\t' << e.path
      << '\t' << dur << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
    ManifestEntry e;
    e.speaker_id = fields[0];
    e.utterance_id = fields[1];
    e.kind = parse_kind(fields[2]);
    e.path = fields[3];
    try {
      e.duration_s = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": bad duration: " + fields[4]);
    }
    m.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const Manifest& m, bool check_paths) {
  std::vector<std::string> keys;
  keys.reserve(m.size());
  for (const auto& e : m) {
    check_field(e.speaker_id, "speaker_id");
    check_field(e.utterance_id, "utterance_id");
    check_field(e.path, "path");
    if (!(e.duration_s > 0.0))
      throw ValidationError("manifest: non-positive duration for " + e.utterance_id);
    keys.push_back(e.speaker_id + "\t" + e.utterance_id + "\t" + kind_name(e.kind));
    if (check_paths && !fs::exists(e.path))
      throw ValidationError("manifest: missing file " + e.path);
  }
  std::sort(keys.begin(), keys.end());
  if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
    throw ValidationError("manifest: duplicate (speaker, utterance, kind) key");
}

IngestResult ingest(const std::string& root, Kind default_kind) {
  if (!fs::is_directory(root)) throw IoError("ingest: no such directory: " + root);
  IngestResult res;

  std::vector<fs::path> speakers;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) speakers.push_back(entry.path());
    else ++res.skipped;  // stray top-level files
  }
  std::sort(speakers.begin(), speakers.end());

  for (const auto& dir : speakers) {
    Kind kind = default_kind;
    const fs::path tag = dir / "kind.tag";
    if (fs::exists(tag)) {
      std::ifstream tf(tag);
      std::string s;
      std::getline(tf, s);
      while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
      kind = parse_kind(s);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::string ext = file.extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (file.filename() == "kind.tag") continue;
      if (ext != ".wav") {
        ++res.skipped;
        continue;
      }
      const WavInfo info = wav_info(file.string());
      ManifestEntry e;
      e.speaker_id = dir.filename().string();
      e.utterance_id = file.stem().string();
      e.kind = kind;
      e.path = file.string();
      e.duration_s = info.duration_s();
      res.entries.push_back(std::move(e));
    }
  }
  if (res.entries.empty()) throw DegenerateInputError("ingest: no audio files under " + root);
  validate_manifest(res.entries);
  return res;
}

std::pair<dsp::Waveform, dsp::Waveform> separate(const std::string& song_path,
                                                 const std::string& adapter_cmd) {
  if (adapter_cmd.empty())
    throw ConfigError("separator adapter not configured (set SINGIT_SEPARATOR_CMD)");
  if (adapter_cmd.find("{input}") == std::string::npos ||
      adapter_cmd.find("{outdir}") == std::string::npos)
    throw ConfigError("separator command must contain {input} and {outdir}: " + adapter_cmd);
  if (!fs::exists(song_path)) throw IoError("no such file: " + song_path);

  TempDir outdir("singit_sep");
  std::string cmd = substitute_all(adapter_cmd, "{input}", "\"" + song_path + "\"");
  cmd = substitute_all(cmd, "{outdir}", "\"" + outdir.path.string() + "\"");
  cmd += " 2>&1";

  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw AdapterError("failed to launch separator: " + cmd);
  std::string output;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, got);
  const int status = ::pclose(pipe);
  const int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (output.size() > 2000) output = output.substr(0, 2000) + "...";
  if (exit_code != 0)
    throw AdapterError("separator exited with code " + std::to_string(exit_code) + ": " + output);

  const std::string vpath = (outdir.path / "vocals.wav").string();
  const std::string apath = (outdir.path / "accompaniment.wav").string();
  if (!fs::exists(vpath)) throw AdapterError("separator produced no vocals.wav; output: " + output);
  if (!fs::exists(apath))
    throw AdapterError("separator produced no accompaniment.wav; output: " + output);
  return {load_audio(vpath), load_audio(apath)};
}

std::pair<dsp::Waveform, dsp::Waveform> separate(const std::string& song_path) {
  const char* cmd = std::getenv("SINGIT_SEPARATOR_CMD");
  return separate(song_path, cmd ? cmd : "");
}

dsp::Waveform remix(const dsp::Waveform& vocals, const dsp::Waveform& instrumental,
                    double vocal_gain) {
  if (vocals.sample_rate != instrumental.sample_rate)
    throw ValidationError("remix: sample rates differ (" + std::to_string(vocals.sample_rate) +
                          " vs " + std::to_string(instrumental.sample_rate) + ")");
  dsp::Waveform out;
  out.sample_rate = vocals.sample_rate;
  const std::int64_t n = std::max(vocals.size(), instrumental.size());
  out.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = i < vocals.size() ? vocals.samples[static_cast<std::size_t>(i)] : 0.0;
    const double a = i < instrumental.size() ? instrumental.samples[static_cast<std::size_t>(i)] : 0.0;
    out.samples[static_cast<std::size_t>(i)] = vocal_gain * v + a;
  }
  rescale_if_clipping(out);
  return out;
}

}  // namespace singit::data
