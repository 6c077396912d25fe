// Copyright 2026 The promptts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// promptts command-line tool.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "promptts/config.hpp"
#include "promptts/dataio.hpp"
#include "promptts/features.hpp"
#include "promptts/pipeline.hpp"
#include "promptts/promptgen.hpp"
#include "promptts/toy.hpp"

namespace fs = std::filesystem;
using namespace promptts;

namespace {

// Options shared by the subcommands that read a config document.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool no_mdn = false;
  bool no_speaker_prompt = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool require_config) {
  auto* opt = cmd->add_option("-c,--config", f.config_path, "Config document (JSON)");
  if (require_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Override training.seed");
  cmd->add_flag("--no-mdn", f.no_mdn, "Cosine-loss prompt encoder instead of the mixture density head");
  cmd->add_flag("--no-speaker-prompt", f.no_speaker_prompt, "Use the style prompt alone");
}

Config resolve(const CommonFlags& f) {
  Config c = f.config_path.empty() ? resolve_config(nlohmann::json::object()) : load_config(f.config_path);
  if (f.seed) c.training.seed = *f.seed;
  if (f.no_mdn) c.training.use_mdn = false;
  if (f.no_speaker_prompt) c.training.use_speaker_prompt = false;
  validate_config(c);
  return c;
}

fs::path output_dir(const Config& c) { return c.data.output_dir.empty() ? fs::path(".") : fs::path(c.data.output_dir); }

MdnMode parse_mode(const std::string& s) {
  if (s == "sample") return MdnMode::kSample;
  if (s == "argmax") return MdnMode::kArgmax;
  throw CLI::ValidationError("--mdn-mode", "expected 'sample' or 'argmax'");
}

void write_outputs(const SynthesisResult& r, const Config& c, const std::string& mel_out, const std::string& wav_out,
                   int griffin_lim_iterations) {
  write_npy(mel_out, r.mel.values, r.mel.frames, r.mel.n_mels);
  std::cout << "wrote " << mel_out << " (" << r.mel.frames << " frames x " << r.mel.n_mels << " mels)\n";
  if (!wav_out.empty()) {
    write_wav(wav_out, invert_logmel(r.mel, c.features, griffin_lim_iterations));
    std::cout << "wrote " << wav_out << " (spectral inversion, low fidelity)\n";
  }
}

std::vector<UtteranceRecord> known_records(const Config& c) {
  if (c.data.manifest.empty() || !fs::exists(c.data.manifest)) return {};
  return load_manifest(c.data.manifest);
}

int cmd_make_toy_corpus(const fs::path& out, std::size_t speakers, std::size_t utterances, std::uint64_t seed) {
  Config c = toy_config();
  ToyCorpusOptions o;
  o.speakers = speakers;
  o.utterances_per_speaker = utterances;
  o.seed = seed;
  write_toy_corpus(make_toy_corpus(o, c.features), out, c);
  std::cout << "wrote " << speakers * utterances << " utterances and " << (out / "config.json").string() << "\n";
  return 0;
}

int cmd_prepare_data(const Config& c) {
  Dataset data = load_dataset(c);
  const fs::path dir = output_dir(c);
  fs::create_directories(dir);
  nlohmann::json summary;
  summary["phones"] = data.phones.symbols();
  summary["thresholds"] = data.thresholds.to_json();
  nlohmann::json utts = nlohmann::json::array();
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    const auto& s = data.features[i].stats;
    const StyleLevels lv = assign_levels(s, r.gender, data.thresholds);
    nlohmann::json u{{"utterance_id", r.utterance_id},
                     {"frames", data.features[i].mel.frames},
                     {"speaking_rate", s.speaking_rate},
                     {"loudness_db", s.loudness_db}};
    u["mean_f0_hz"] = s.mean_f0_hz ? nlohmann::json(*s.mean_f0_hz) : nlohmann::json(nullptr);
    for (Attribute a : kAttributes) u[std::string(to_string(a))] = std::string(level_name(a, lv.get(a)));
    utts.push_back(std::move(u));
  }
  summary["utterances"] = std::move(utts);
  const fs::path path = dir / "dataset.json";
  write_text_file(path, summary.dump(2) + "\n");
  std::cout << "prepared " << data.records.size() << " utterances, " << data.phones.size() << " phones; wrote "
            << path.string() << "\n";
  return 0;
}

int cmd_make_style_prompts(const Config& c, const std::string& out) {
  Dataset data = load_dataset(c);
  Rng rng(derive_seed(c.training.seed, "style-prompts"));
  std::vector<PromptManifestEntry> entries;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    PromptManifestEntry e;
    e.utterance_id = r.utterance_id;
    e.speaker_id = r.speaker_id;
    e.gender = r.gender;
    e.levels = assign_levels(data.features[i].stats, r.gender, data.thresholds);
    e.style_prompt = render_style_prompt(e.levels, r.gender, data.templates, data.lexicon, rng);
    if (auto it = data.speaker_prompts.find(r.speaker_id);
        c.training.use_speaker_prompt && it != data.speaker_prompts.end() && !it->second.prompt_text.empty())
      e.speaker_prompt = it->second.prompt_text;
    e.prompt = compose_prompt(e.speaker_prompt, e.style_prompt);
    entries.push_back(std::move(e));
  }
  const fs::path path = out.empty() ? output_dir(c) / "style_prompts.jsonl" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, serialize_prompt_manifest(entries));
  std::cout << "wrote " << entries.size() << " prompts to " << path.string() << "\n";
  return 0;
}

int cmd_train(const Config& c, const std::string& resume, bool quiet) {
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  auto on_log = [quiet](const StepLog& l) {
    if (!quiet) std::cout << l.to_json().dump() << "\n";
  };
  TrainResult r = train(c, from, on_log);
  std::cout << "final checkpoint " << r.final_checkpoint.string() << " at step " << r.last.step << "\n";
  return 0;
}

int cmd_analyze(const LoadedCheckpoint& ck, const Config& data_config, const std::string& source,
                const std::string& projection, std::uint64_t seed, std::optional<bool> speaker_prompts,
                const std::string& out) {
  const PromptTTSModel& model = *ck.model;
  Dataset data = load_dataset(data_config);
  data.phones = model.phones();
  std::vector<std::size_t> idx(data.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  AnalysisOptions o;
  o.source = parse_embedding_source(source);
  if (projection == "pca") {
    o.projection = Projection::kPca;
  } else if (projection == "tsne") {
    o.projection = Projection::kTsne;
  } else {
    throw CLI::ValidationError("--projection", "expected 'pca' or 'tsne'");
  }
  o.seed = seed;
  o.use_speaker_prompt = speaker_prompts;
  EmbeddingReport rep = analyze_embeddings(model, make_examples(data, model.normalization(), idx), o);
  const fs::path path = out.empty() ? output_dir(data_config) / "embedding_report.tsv" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, rep.to_table());
  std::printf("separation %.6f (intra %.6f, inter %.6f) over %zu utterances; wrote %s\n", rep.separation,
              rep.intra_similarity, rep.inter_similarity, rep.rows.size(), path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-conditioned text-to-speech: data preparation, training, synthesis and analysis"};
  app.require_subcommand(1);

  // make-toy-corpus
  auto* toy = app.add_subcommand("make-toy-corpus", "Write the synthetic four-speaker corpus and a matching config");
  std::string toy_out;
  std::size_t toy_speakers = 4, toy_utts = 10;
  std::uint64_t toy_seed = 7;
  toy->add_option("-o,--out", toy_out, "Output directory")->required();
  toy->add_option("--speakers", toy_speakers, "Number of speakers (1-8)")->check(CLI::Range(1, 8));
  toy->add_option("--utterances", toy_utts, "Utterances per speaker")->check(CLI::PositiveNumber);
  toy->add_option("--seed", toy_seed, "Corpus seed");

  // prepare-data
  CommonFlags prep_f;
  auto* prep = app.add_subcommand("prepare-data", "Extract and cache features; fit style thresholds");
  add_common(prep, prep_f, true);

  // make-style-prompts
  CommonFlags msp_f;
  std::string msp_out;
  auto* msp = app.add_subcommand("make-style-prompts", "Render one composed prompt per utterance");
  add_common(msp, msp_f, true);
  msp->add_option("-o,--out", msp_out, "Prompt manifest path (default: <output_dir>/style_prompts.jsonl)");

  // train
  CommonFlags tr_f;
  std::string tr_resume;
  std::optional<int> tr_steps;
  bool tr_quiet = false;
  auto* tr = app.add_subcommand("train", "Train; loss logs go to <output_dir>/train_log.jsonl");
  add_common(tr, tr_f, true);
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--max-steps", tr_steps, "Override training.max_steps")->check(CLI::NonNegativeNumber);
  tr->add_flag("-q,--quiet", tr_quiet, "Do not echo step logs to stdout");

  // synthesize / synthesize-ref share most options
  std::string ck_path, text, style_prompt, speaker_prompt, mel_out = "mel.npy", wav_out, reference, mode = "sample";
  std::uint64_t syn_seed = 0, diff_seed = 0;
  double temperature = 1.0;
  int gl_iters = 32;
  bool syn_no_sp = false;
  CommonFlags syn_f;
  auto* syn = app.add_subcommand("synthesize", "Generate a mel spectrogram from text and prompts");
  auto* ref = app.add_subcommand("synthesize-ref", "Generate with the style of a reference recording");
  for (auto* cmd : {syn, ref}) {
    cmd->add_option("--checkpoint", ck_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("-t,--text", text, "Phone symbols separated by spaces, or the text of a manifest record")
        ->required();
    cmd->add_option("-c,--config", syn_f.config_path, "Config whose manifest resolves record texts");
    cmd->add_option("--seed", syn_seed, "Seed for prompt-side sampling");
    cmd->add_option("--diffusion-seed", diff_seed, "Seed for the reverse diffusion noise");
    cmd->add_option("-o,--out", mel_out, "Output .npy (denormalized log-mel, frames x mels)");
    cmd->add_option("--wav", wav_out, "Also write a low-fidelity waveform by spectral inversion");
    cmd->add_option("--inversion-iterations", gl_iters, "Spectral inversion iterations")->check(CLI::PositiveNumber);
  }
  syn->add_option("--style-prompt", style_prompt, "Style prompt")->required();
  syn->add_option("--speaker-prompt", speaker_prompt, "Speaker prompt");
  syn->add_flag("--no-speaker-prompt", syn_no_sp, "Ignore --speaker-prompt");
  syn->add_option("--mdn-mode", mode, "Mixture use: sample or argmax")->check(CLI::IsMember({"sample", "argmax"}));
  syn->add_option("--temperature", temperature, "Sampling temperature")->check(CLI::PositiveNumber);
  ref->add_option("--reference", reference, "Reference WAV")->required()->check(CLI::ExistingFile);

  // analyze-embeddings
  std::string an_ck, an_config, an_source = "prompt", an_proj = "pca", an_out;
  std::uint64_t an_seed = 0;
  bool an_no_sp = false, an_sp = false;
  auto* an = app.add_subcommand("analyze-embeddings", "Project style embeddings to 2-D and score speaker separation");
  an->add_option("--checkpoint", an_ck, "Model checkpoint")->required()->check(CLI::ExistingFile);
  an->add_option("-c,--config", an_config, "Config naming the manifest (default: the checkpoint's)")
      ->check(CLI::ExistingFile);
  an->add_option("--source", an_source, "prompt or reference")->check(CLI::IsMember({"prompt", "reference"}));
  an->add_option("--projection", an_proj, "pca or tsne")->check(CLI::IsMember({"pca", "tsne"}));
  an->add_option("--seed", an_seed, "Seed for prompt rendering and t-SNE");
  an->add_option("-o,--out", an_out, "Report path (default: <output_dir>/embedding_report.tsv)");
  auto* f1 = an->add_flag("--no-speaker-prompt", an_no_sp, "Render prompts without speaker prompts");
  auto* f2 = an->add_flag("--speaker-prompt", an_sp, "Render prompts with speaker prompts");
  f1->excludes(f2);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) return cmd_make_toy_corpus(toy_out, toy_speakers, toy_utts, toy_seed);
    if (*prep) return cmd_prepare_data(resolve(prep_f));
    if (*msp) return cmd_make_style_prompts(resolve(msp_f), msp_out);
    if (*tr) {
      Config c = resolve(tr_f);
      if (tr_steps) c.training.max_steps = *tr_steps;
      return cmd_train(c, tr_resume, tr_quiet);
    }
    if (*syn || *ref) {
      LoadedCheckpoint ck = load_checkpoint(ck_path);
      const Config& mc = ck.model->config();
      const auto known = known_records(syn_f.config_path.empty() ? mc : load_config(syn_f.config_path));
      const auto ids = resolve_phonemes(text, ck.model->phones(), known);
      SynthesisOptions o;
      o.seed = syn_seed;
      o.diffusion_seed = diff_seed;
      o.temperature = temperature;
      o.mode = parse_mode(mode);
      SynthesisResult r;
      if (*syn) {
        std::optional<std::string> sp;
        if (!syn_no_sp && !speaker_prompt.empty()) sp = speaker_prompt;
        r = synthesize(*ck.model, ids, sp, style_prompt, o);
        std::cout << "prompt: " << r.prompt << "\n";
      } else {
        r = synthesize_from_reference(*ck.model, ids, read_wav(reference), o);
      }
      write_outputs(r, mc, mel_out, wav_out, gl_iters);
      return 0;
    }
    if (*an) {
      LoadedCheckpoint ck = load_checkpoint(an_ck);
      const Config dc = an_config.empty() ? ck.model->config() : load_config(an_config);
      std::optional<bool> sp;
      if (an_no_sp) sp = false;
      if (an_sp) sp = true;
      return cmd_analyze(ck, dc, an_source, an_proj, an_seed, sp, an_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
