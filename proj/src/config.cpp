// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "singit/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

namespace singit::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

// Every tunable, in one place. Order matters only for apply_env's scan.
const std::vector<std::string>& all_keys() {
  static const std::vector<std::string> keys = {
      "lambda3",      "crop_frames",     "batch_size",     "lr",
      "max_steps",    "seed",            "checkpoint_every",
      "freq_bins",    "emb_dim",         "conv_channels",  "conv_kernel",
      "enc_lstm_hidden", "dec_lstm_hidden", "downsample",  "postnet_layers",
      "n_fft",        "hop",             "window",         "sample_rate"};
  return keys;
}

}  // namespace

void apply_kv(AppConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "lambda3") cfg.train.lambda3 = to_double(key, value);
  else if (key == "crop_frames") cfg.train.crop_frames = to_int(key, value);
  else if (key == "batch_size") cfg.train.batch_size = to_int(key, value);
  else if (key == "lr") cfg.train.lr = to_double(key, value);
  else if (key == "max_steps") cfg.train.max_steps = to_i64(key, value);
  else if (key == "seed") cfg.train.seed = to_u64(key, value);
  else if (key == "checkpoint_every") cfg.train.checkpoint_every = to_i64(key, value);
  else if (key == "freq_bins") cfg.model.freq_bins = to_int(key, value);
  else if (key == "emb_dim") cfg.model.emb_dim = to_int(key, value);
  else if (key == "conv_channels") cfg.model.conv_channels = to_int(key, value);
  else if (key == "conv_kernel") cfg.model.conv_kernel = to_int(key, value);
  else if (key == "enc_lstm_hidden") cfg.model.enc_lstm_hidden = to_int(key, value);
  else if (key == "dec_lstm_hidden") cfg.model.dec_lstm_hidden = to_int(key, value);
  else if (key == "downsample") cfg.model.downsample = to_int(key, value);
  else if (key == "postnet_layers") cfg.model.postnet_layers = to_int(key, value);
  else if (key == "n_fft") cfg.stft.n_fft = to_int(key, value);
  else if (key == "hop") cfg.stft.hop = to_int(key, value);
  else if (key == "window") cfg.stft.window = value;
  else if (key == "sample_rate") cfg.stft.sample_rate = to_int(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

void apply_file(AppConfig& cfg, const std::string& path) {
  for (const auto& [k, v] : load_config_file(path)) apply_kv(cfg, k, v);
}

void apply_env(AppConfig& cfg) {
  for (const std::string& key : all_keys()) {
    std::string env = "SINGIT_" + key;
    std::transform(env.begin(), env.end(), env.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    if (const char* v = std::getenv(env.c_str())) apply_kv(cfg, key, v);
  }
}

}  // namespace singit::config
