// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef SINGIT_CONFIG_HPP
#define SINGIT_CONFIG_HPP

#include <map>
#include <string>

#include "singit/dsp.hpp"
#include "singit/model.hpp"
#include "singit/training.hpp"

namespace singit::config {

struct AppConfig {
  dsp::StftConfig stft;
  model::ModelConfig model;
  training::TrainConfig train;
};

// "key = value" lines, '#' comments, blank lines ignored. Keys must name
// AppConfig fields (see apply_kv); unknown keys are configuration errors.
std::map<std::string, std::string> load_config_file(const std::string& path);

// Applies one key; throws ConfigError on unknown key or unparsable value.
void apply_kv(AppConfig& cfg, const std::string& key, const std::string& value);

// Precedence below the CLI: file values first, then SINGIT_<UPPERKEY>
// environment variables on top. CLI flags overwrite last, in the caller.
void apply_file(AppConfig& cfg, const std::string& path);
void apply_env(AppConfig& cfg);

}  // namespace singit::config

#endif  // SINGIT_CONFIG_HPP
