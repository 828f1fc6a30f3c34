// Copyright 2026 The SingIt Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "singit/config.hpp"
#include "singit/data.hpp"
#include "singit/pipeline.hpp"
#include "singit/survey.hpp"
#include "singit/training.hpp"

namespace {

using singit::config::AppConfig;

std::vector<int> read_ratings(std::istream& in) {
  std::vector<int> out;
  std::string line;
  while (std::getline(in, line)) {
    std::size_t a = 0, b = line.size();
    while (a < b && std::isspace(static_cast<unsigned char>(line[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(line[b - 1]))) --b;
    if (a == b) continue;
    const std::string tok = line.substr(a, b - a);
    try {
      std::size_t used;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw singit::ValidationError("survey-stats: not an integer rating: '" + tok + "'");
    }
  }
  return out;
}

// Config file values must land before CLI flags overwrite them, so --config
// is found by a pre-pass over argv rather than by CLI11.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return "";
}

void add_stft_flags(CLI::App* cmd, AppConfig& cfg) {
  cmd->add_option("--n-fft", cfg.stft.n_fft, "Analysis FFT length");
  cmd->add_option("--hop", cfg.stft.hop, "Analysis hop in samples");
  cmd->add_option("--window", cfg.stft.window, "Analysis window (hann or rect)");
  cmd->add_option("--sample-rate", cfg.stft.sample_rate, "Working sample rate");
  // The value is consumed by the argv pre-pass; the sink only needs to outlive
  // parsing, hence static storage.
  static std::string config_sink;
  cmd->add_option("--config", config_sink, "Config file with key = value lines");
}

void add_tuning_flags(CLI::App* cmd, AppConfig& cfg) {
  cmd->add_option("--lambda3", cfg.train.lambda3, "Weight of the code-consistency loss");
  cmd->add_option("--crop-frames", cfg.train.crop_frames, "Training crop length in frames");
  cmd->add_option("--batch-size", cfg.train.batch_size, "Crops per optimizer step");
  cmd->add_option("--lr", cfg.train.lr, "Adam learning rate");
  cmd->add_option("--max-steps", cfg.train.max_steps, "Optimizer steps to run");
  cmd->add_option("--seed", cfg.train.seed, "Run seed (init, sampling)");
  cmd->add_option("--checkpoint-every", cfg.train.checkpoint_every,
                  "Periodic checkpoint cadence in steps (0 = off)");
  cmd->add_option("--freq-bins", cfg.model.freq_bins, "Spectrogram rows the model consumes");
  cmd->add_option("--emb-dim", cfg.model.emb_dim, "Speaker embedding width");
  cmd->add_option("--conv-channels", cfg.model.conv_channels, "Conv stack width");
  cmd->add_option("--conv-kernel", cfg.model.conv_kernel, "Conv kernel length (odd)");
  cmd->add_option("--enc-lstm-hidden", cfg.model.enc_lstm_hidden,
                  "Encoder BLSTM units per direction");
  cmd->add_option("--dec-lstm-hidden", cfg.model.dec_lstm_hidden,
                  "Decoder BLSTM units per direction");
  cmd->add_option("--downsample", cfg.model.downsample, "Bottleneck downsampling factor");
  cmd->add_option("--postnet-layers", cfg.model.postnet_layers, "Postnet conv depth");
  add_stft_flags(cmd, cfg);
}

int run(int argc, char** argv) {
  AppConfig cfg;
  const std::string config_path = find_config_arg(argc, argv);
  if (!config_path.empty()) singit::config::apply_file(cfg, config_path);
  singit::config::apply_env(cfg);

  CLI::App app{"Zero-shot speech-to-singing style transfer"};
  app.require_subcommand(1);

  // ingest
  auto* c_ingest = app.add_subcommand("ingest", "Scan a speaker-per-directory corpus into a manifest");
  std::string root, manifest_out, kind = "speech";
  c_ingest->add_option("--root", root, "Corpus root directory")->required();
  c_ingest->add_option("--out", manifest_out, "Manifest file to write")->required();
  c_ingest->add_option("--kind", kind, "Default kind for untagged directories");

  // separate
  auto* c_sep = app.add_subcommand("separate", "Run the configured source separator on a song");
  std::string song, outdir;
  c_sep->add_option("--song", song, "Input mix")->required();
  c_sep->add_option("--outdir", outdir, "Directory for vocals.wav and accompaniment.wav")->required();

  // embed
  auto* c_embed = app.add_subcommand("embed", "Compute a speaker embedding from utterances");
  std::vector<std::string> embed_audio;
  std::string embed_out, backend = "baseline";
  c_embed->add_option("--audio", embed_audio, "Utterance WAV (repeatable)")->required();
  c_embed->add_option("--out", embed_out, "Embedding file to write (.emb)")->required();
  c_embed->add_option("--backend", backend, "Embedder backend name");

  // train
  auto* c_train = app.add_subcommand("train", "Self-reconstruction training from a manifest");
  std::string train_manifest, train_out, loss_csv, ckpt_dir;
  c_train->add_option("--manifest", train_manifest, "Training manifest")->required();
  c_train->add_option("--out", train_out, "Final checkpoint path")->required();
  c_train->add_option("--loss-csv", loss_csv, "Loss curve CSV path");
  c_train->add_option("--ckpt-dir", ckpt_dir, "Directory for periodic checkpoints");
  add_tuning_flags(c_train, cfg);

  // transfer
  auto* c_tr = app.add_subcommand("transfer", "Render a vocal track in another speaker's voice");
  std::string tr_song, tr_ckpt, tr_out, tr_emb;
  std::vector<std::string> tr_speech;
  bool tr_separate = false, tr_src_emb = false;
  int tr_iters = 60;
  std::uint64_t tr_seed = 0;
  double tr_gain = 1.0;
  std::string tr_backend = "baseline";
  c_tr->add_option("--song", tr_song, "Content audio (vocals, or a mix with --separate)")->required();
  c_tr->add_option("--speech", tr_speech, "Target speaker utterance WAV (repeatable)");
  c_tr->add_option("--emb", tr_emb, "Target speaker embedding file (.emb)");
  c_tr->add_option("--ckpt", tr_ckpt, "Model checkpoint")->required();
  c_tr->add_option("--out", tr_out, "Output WAV")->required();
  c_tr->add_flag("--separate", tr_separate, "Run the source separator first and remix after");
  c_tr->add_option("--iters", tr_iters, "Phase reconstruction iterations");
  c_tr->add_option("--gl-seed", tr_seed, "Phase init seed");
  c_tr->add_option("--vocal-gain", tr_gain, "Vocal gain at remix");
  c_tr->add_option("--backend", tr_backend, "Embedder backend name");
  c_tr->add_flag("--source-emb-to-encoder", tr_src_emb,
                 "Condition the encoder on the content signal's own embedding");

  // vocode
  auto* c_voc = app.add_subcommand("vocode", "Reconstruct audio from a spectrogram");
  std::string voc_spec, voc_audio, voc_out, voc_dump;
  int voc_iters = 60;
  std::uint64_t voc_seed = 0;
  c_voc->add_option("--spec", voc_spec, "Saved log-spectrogram (.spec)");
  c_voc->add_option("--audio", voc_audio, "WAV to analyze and resynthesize instead");
  c_voc->add_option("--out", voc_out, "Output WAV")->required();
  c_voc->add_option("--dump-spec", voc_dump, "Also save the analyzed log-spectrogram here");
  c_voc->add_option("--iters", voc_iters, "Phase reconstruction iterations");
  c_voc->add_option("--gl-seed", voc_seed, "Phase init seed");
  add_stft_flags(c_voc, cfg);

  // survey-stats
  auto* c_sv = app.add_subcommand("survey-stats",
                                  "Mean and Student-t 95% interval of 1..5 ratings");
  std::string sv_file;
  c_sv->add_option("--file", sv_file, "Ratings file, one integer per line (default: stdin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (c_ingest->parsed()) {
    const auto res = singit::data::ingest(root, singit::data::parse_kind(kind));
    singit::data::save_manifest(res.entries, manifest_out);
    if (res.skipped > 0)
      std::fprintf(stderr, "singit: warning: skipped %d non-audio file(s)\n", res.skipped);
    std::printf("wrote %zu entries to %s\n", res.entries.size(), manifest_out.c_str());
    return 0;
  }

  if (c_sep->parsed()) {
    auto [vocals, inst] = singit::data::separate(song);
    std::filesystem::create_directories(outdir);
    singit::data::save_audio(vocals, (std::filesystem::path(outdir) / "vocals.wav").string());
    singit::data::save_audio(inst, (std::filesystem::path(outdir) / "accompaniment.wav").string());
    std::printf("wrote stems to %s\n", outdir.c_str());
    return 0;
  }

  if (c_embed->parsed()) {
    std::vector<singit::dsp::Waveform> ws;
    for (const auto& p : embed_audio) ws.push_back(singit::data::load_audio(p));
    const auto e = singit::speaker::embed_speaker(ws, backend);
    singit::speaker::save_embedding(e, embed_out);
    std::printf("wrote %s\n", embed_out.c_str());
    return 0;
  }

  if (c_train->parsed()) {
    const auto manifest = singit::data::load_manifest(train_manifest);
    const auto dataset = singit::training::load_dataset(manifest);
    singit::training::TrainPaths paths;
    paths.loss_csv = loss_csv;
    paths.checkpoint_dir = ckpt_dir;
    auto result = singit::training::train_loop(dataset, cfg.model, cfg.train, cfg.stft, paths);
    singit::model::save_checkpoint(result.params, train_out);
    if (!result.curve.empty())
      std::printf("trained %zu steps, final total loss %.6g\n", result.curve.size(),
                  result.curve.back().total);
    std::printf("wrote %s\n", train_out.c_str());
    return 0;
  }

  if (c_tr->parsed()) {
    if (tr_speech.empty() == tr_emb.empty())
      throw singit::ConfigError("transfer: provide exactly one of --speech or --emb");
    const auto params = singit::model::load_checkpoint(tr_ckpt);
    singit::speaker::SpeakerEmbedding e;
    if (!tr_emb.empty()) {
      e = singit::speaker::load_embedding(tr_emb);
    } else {
      std::vector<singit::dsp::Waveform> ws;
      for (const auto& p : tr_speech) ws.push_back(singit::data::load_audio(p));
      e = singit::speaker::embed_speaker(ws, tr_backend);
    }
    singit::pipeline::TransferOptions opt;
    opt.gl_iters = tr_iters;
    opt.gl_seed = tr_seed;
    opt.embed_backend = tr_backend;
    opt.source_embedding_to_encoder = tr_src_emb;
    opt.vocal_gain = tr_gain;

    const auto to_model_rate = [&params](singit::dsp::Waveform w) {
      if (w.sample_rate != params.stft.sample_rate)
        w = singit::data::resample(w, params.stft.sample_rate);
      return w;
    };
    singit::dsp::Waveform out;
    if (tr_separate) {
      auto [vocals, inst] = singit::data::separate(tr_song);
      const auto converted =
          singit::pipeline::transfer_with_embedding(to_model_rate(vocals), e, params, opt);
      out = singit::data::remix(converted, inst, opt.vocal_gain);
    } else {
      out = singit::pipeline::transfer_with_embedding(
          to_model_rate(singit::data::load_audio(tr_song)), e, params, opt);
    }
    singit::data::save_audio(out, tr_out);
    std::printf("wrote %s\n", tr_out.c_str());
    return 0;
  }

  if (c_voc->parsed()) {
    if (voc_spec.empty() == voc_audio.empty())
      throw singit::ConfigError("vocode: provide exactly one of --spec or --audio");
    singit::dsp::LogSpectrogram x;
    std::int64_t length = 0;
    if (!voc_spec.empty()) {
      x = singit::dsp::load_log_spectrogram(voc_spec);
    } else {
      auto w = singit::data::load_audio(voc_audio);
      if (w.sample_rate != cfg.stft.sample_rate)
        w = singit::data::resample(w, cfg.stft.sample_rate);
      x = singit::dsp::mag_to_log(
          singit::dsp::magnitude(singit::dsp::stft(w, cfg.stft), cfg.stft));
      length = w.size();
    }
    if (!voc_dump.empty()) singit::dsp::save_log_spectrogram(x, voc_dump);
    const auto out = singit::pipeline::vocode(x, voc_iters, voc_seed, length);
    singit::data::save_audio(out, voc_out);
    std::printf("wrote %s\n", voc_out.c_str());
    return 0;
  }

  if (c_sv->parsed()) {
    std::vector<int> ratings;
    if (sv_file.empty()) {
      ratings = read_ratings(std::cin);
    } else {
      std::ifstream f(sv_file);
      if (!f) throw singit::IoError("cannot open: " + sv_file);
      ratings = read_ratings(f);
    }
    const auto r = singit::survey::survey_stats(ratings);
    if (r.degenerate)
      std::fprintf(stderr, "singit: note: single rating, no spread estimate\n");
    std::printf("%s\n", singit::survey::format_survey(r).c_str());
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const singit::Error& e) {
    std::fprintf(stderr, "singit: error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "singit: error: %s\n", e.what());
    return 2;
  }
}
