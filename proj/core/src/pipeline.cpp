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

#include "promptts/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace promptts {

using ag::Var;
using nlohmann::json;

// ---- losses ----

json LossBreakdown::to_json() const {
  return {{"l_dec", l_dec}, {"l_dur", l_dur}, {"l_pitch", l_pitch}, {"l_style", l_style}, {"total", total}};
}

bool LossBreakdown::finite() const {
  return std::isfinite(l_dec) && std::isfinite(l_dur) && std::isfinite(l_pitch) && std::isfinite(l_style) &&
         std::isfinite(total);
}

LossWeights LossWeights::from_config(const TrainingConfig& t) {
  return {t.weight_dec, t.weight_dur, t.weight_pitch, t.weight_style};
}

LossBreakdown total_loss(double l_dec, double l_dur, double l_pitch, double l_style, const LossWeights& w) {
  LossBreakdown b;
  b.l_dec = w.dec * l_dec;
  b.l_dur = w.dur * l_dur;
  b.l_pitch = w.pitch * l_pitch;
  b.l_style = w.style * l_style;
  b.total = b.l_dec + b.l_dur + b.l_pitch + b.l_style;
  return b;
}

Var total_loss(const LossTerms& terms, const LossWeights& w, LossBreakdown* breakdown) {
  const Var* parts[] = {&terms.l_dec, &terms.l_dur, &terms.l_pitch, &terms.l_style};
  for (const Var* p : parts)
    if (!p->defined() || p->size() != 1) throw PipelineError("loss terms must be scalars");
  if (breakdown)
    *breakdown = total_loss(terms.l_dec.item(), terms.l_dur.item(), terms.l_pitch.item(), terms.l_style.item(), w);
  return terms.l_dec * w.dec + terms.l_dur * w.dur + terms.l_pitch * w.pitch + terms.l_style * w.style;
}

double lr_schedule(std::size_t step, double base_lr, std::size_t warmup_steps) {
  if (step == 0) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup_steps == 0) throw std::invalid_argument("lr_schedule: warmup_steps must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return base_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

// ---- batching ----

std::vector<Batch> batch_by_frames(std::span<const std::size_t> frames, std::size_t max_frames) {
  if (max_frames == 0) throw PipelineError("max_frames must be positive");
  std::vector<std::size_t> order(frames.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
    if (frames[i] > max_frames)
      throw PipelineError("record " + std::to_string(i) + " has " + std::to_string(frames[i]) +
                          " frames, exceeding max_frames " + std::to_string(max_frames));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frames[a] < frames[b]; });
  std::vector<Batch> out;
  Batch current;
  std::size_t used = 0;
  for (auto i : order) {
    if (!current.empty() && used + frames[i] > max_frames) {
      out.push_back(std::move(current));
      current.clear();
      used = 0;
    }
    current.push_back(i);
    used += frames[i];
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<Batch> batch_by_frames(const std::vector<UtteranceRecord>& records, std::size_t max_frames) {
  std::vector<std::size_t> frames;
  frames.reserve(records.size());
  for (const auto& r : records) frames.push_back(r.total_frames());
  return batch_by_frames(frames, max_frames);
}

std::vector<Batch> epoch_batches(std::span<const std::size_t> frames, std::size_t max_frames, std::uint64_t seed,
                                 std::size_t epoch) {
  auto batches = batch_by_frames(frames, max_frames);
  Rng rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
  rng.shuffle(batches);
  return batches;
}

// ---- normalization ----

Normalization Normalization::fit(const std::vector<UtteranceFeatures>& features, std::span<const std::size_t> indices,
                                 std::size_t n_mels) {
  Normalization n;
  n.mel_mean.assign(n_mels, 0.0);
  n.mel_std.assign(n_mels, 0.0);
  std::size_t count = 0;
  double f0_sum = 0.0, f0_all = 0.0;
  std::size_t voiced = 0, f0_frames = 0;
  for (auto i : indices) {
    const auto& f = features.at(i);
    if (f.mel.n_mels != n_mels) throw PipelineError("mel bins of " + f.utterance_id + " do not match the config");
    for (std::size_t t = 0; t < f.mel.frames; ++t)
      for (std::size_t m = 0; m < n_mels; ++m) n.mel_mean[m] += f.mel.at(t, m);
    count += f.mel.frames;
    for (std::size_t t = 0; t < f.pitch.frames(); ++t) {
      f0_all += f.pitch.log_f0[t];
      ++f0_frames;
      if (f.pitch.vuv[t]) {
        f0_sum += f.pitch.log_f0[t];
        ++voiced;
      }
    }
  }
  if (count == 0) throw PipelineError("normalization needs at least one frame");
  for (auto& v : n.mel_mean) v /= static_cast<double>(count);
  for (auto i : indices) {
    const auto& f = features[i];
    for (std::size_t t = 0; t < f.mel.frames; ++t)
      for (std::size_t m = 0; m < n_mels; ++m) {
        const double d = f.mel.at(t, m) - n.mel_mean[m];
        n.mel_std[m] += d * d;
      }
  }
  for (auto& v : n.mel_std) v = std::max(std::sqrt(v / static_cast<double>(count)), 1e-2);
  n.log_f0_mean = voiced > 0 ? f0_sum / static_cast<double>(voiced)
                             : (f0_frames > 0 ? f0_all / static_cast<double>(f0_frames) : 0.0);
  return n;
}

std::vector<double> Normalization::normalize(std::span<const double> mel) const {
  const std::size_t m = mel_mean.size();
  if (m == 0 || mel.size() % m != 0) throw PipelineError("mel size does not match the normalization");
  std::vector<double> out(mel.size());
  for (std::size_t i = 0; i < mel.size(); ++i) out[i] = (mel[i] - mel_mean[i % m]) / mel_std[i % m];
  return out;
}

std::vector<double> Normalization::denormalize(std::span<const double> mel) const {
  const std::size_t m = mel_mean.size();
  if (m == 0 || mel.size() % m != 0) throw PipelineError("mel size does not match the normalization");
  std::vector<double> out(mel.size());
  for (std::size_t i = 0; i < mel.size(); ++i) out[i] = mel[i] * mel_std[i % m] + mel_mean[i % m];
  return out;
}

void Normalization::save(Archive& archive) const {
  archive.put("norm/mel_mean", mel_mean);
  archive.put("norm/mel_std", mel_std);
  archive.meta()["log_f0_mean"] = log_f0_mean;
}

Normalization Normalization::load(const Archive& archive) {
  Normalization n;
  n.mel_mean = archive.get("norm/mel_mean").data;
  n.mel_std = archive.get("norm/mel_std").data;
  n.log_f0_mean = archive.meta().at("log_f0_mean").get<double>();
  return n;
}

// ---- data ----

Dataset build_dataset(std::vector<UtteranceRecord> records, std::vector<UtteranceFeatures> features,
                      SpeakerPromptMap speaker_prompts, std::vector<PromptTemplate> templates, Lexicon lexicon) {
  if (records.size() != features.size()) throw PipelineError("records and features differ in length");
  if (records.empty()) throw PipelineError("dataset is empty");
  Dataset d;
  d.phones = PhoneSet::from_records(records);
  std::vector<GenderedStats> stats;
  stats.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) stats.push_back({features[i].stats, records[i].gender});
  ThresholdFit fit = compute_thresholds(stats);
  for (const auto& w : fit.warnings) spdlog::warn("{}", w);
  d.thresholds = std::move(fit.table);
  d.records = std::move(records);
  d.features = std::move(features);
  d.speaker_prompts = std::move(speaker_prompts);
  d.templates = std::move(templates);
  d.lexicon = std::move(lexicon);
  return d;
}

Dataset load_dataset(const Config& config) {
  const auto& dc = config.data;
  if (dc.manifest.empty()) throw PipelineError("data.manifest is not set");
  auto records = load_manifest(dc.manifest, config.features.sample_rate_hz);
  const auto base = std::filesystem::path(dc.manifest).parent_path();
  for (auto& r : records) {
    std::filesystem::path p(r.audio_path);
    if (p.is_relative()) r.audio_path = (base / p).string();
  }
  SpeakerPromptMap prompts;
  if (!dc.speaker_prompts.empty()) prompts = load_speaker_prompts(dc.speaker_prompts);
  auto templates = dc.templates.empty() ? default_templates() : load_templates(dc.templates);
  auto lexicon = dc.lexicon.empty() ? default_lexicon() : load_lexicon(dc.lexicon);

  std::vector<UtteranceFeatures> features;
  features.reserve(records.size());
  std::optional<FeatureCache> cache;
  if (!dc.feature_cache.empty()) cache.emplace(dc.feature_cache, config.features);
  for (const auto& r : records) {
    if (cache) {
      features.push_back(cache->load_or_compute(r));
    } else {
      features.push_back(compute_features(r, read_wav(r.audio_path), config.features));
    }
  }
  return build_dataset(std::move(records), std::move(features), std::move(prompts), std::move(templates),
                       std::move(lexicon));
}

std::vector<TrainingExample> make_examples(const Dataset& data, const Normalization& norm,
                                           std::span<const std::size_t> indices) {
  constexpr std::size_t kFrameTolerance = 3;
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& r = data.records.at(i);
    const auto& f = data.features.at(i);
    TrainingExample ex;
    ex.utterance_id = r.utterance_id;
    ex.speaker_id = r.speaker_id;
    ex.gender = r.gender;
    ex.phone_ids = data.phones.ids(r.phonemes);
    ex.durations = r.durations;
    ex.frames = r.total_frames();
    if (ex.frames == 0) throw PipelineError(r.utterance_id + ": durations sum to zero");
    const std::size_t have = f.mel.frames;
    const std::size_t diff = have > ex.frames ? have - ex.frames : ex.frames - have;
    if (have == 0 || diff > kFrameTolerance)
      throw PipelineError(r.utterance_id + ": feature frames (" + std::to_string(have) + ") and alignment frames (" +
                          std::to_string(ex.frames) + ") differ");
    const std::size_t m = f.mel.n_mels;
    std::vector<double> mel(ex.frames * m);
    ex.log_f0.resize(ex.frames);
    ex.vuv.resize(ex.frames);
    for (std::size_t t = 0; t < ex.frames; ++t) {
      const std::size_t src = std::min(t, have - 1);
      std::copy_n(f.mel.values.begin() + static_cast<std::ptrdiff_t>(src * m), m,
                  mel.begin() + static_cast<std::ptrdiff_t>(t * m));
      const std::size_t ps = std::min(src, f.pitch.frames() - 1);
      ex.log_f0[t] = f.pitch.log_f0[ps];
      ex.vuv[t] = f.pitch.vuv[ps];
    }
    ex.mel = norm.normalize(mel);
    ex.levels = assign_levels(f.stats, r.gender, data.thresholds);
    if (auto it = data.speaker_prompts.find(r.speaker_id);
        it != data.speaker_prompts.end() && !it->second.prompt_text.empty())
      ex.speaker_prompt = it->second.prompt_text;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- model ----

PromptTTSModel::PromptTTSModel(const Config& config, PhoneSet phones)
    : config_(config), phones_(std::move(phones)), schedule_(DiffusionSchedule::from_config(config.acoustic)) {
  validate_config(config_);
  if (phones_.size() == 0) throw PipelineError("phone inventory is empty");
  Rng rng(derive_seed(config_.training.seed, "init"));
  const auto n_mels = static_cast<std::size_t>(config_.features.n_mels);
  const auto embed = static_cast<std::size_t>(config_.reference_encoder.embed_dim);
  const auto hidden = static_cast<std::size_t>(config_.acoustic.hidden);
  backbone_ = make_backbone(store_, config_.prompt_encoder);
  backbone_->apply_trainability(store_, config_.prompt_encoder.trainable_blocks);
  reference_ = std::make_unique<ReferenceEncoder>(store_, "reference", config_.reference_encoder, n_mels, rng);
  head_ = std::make_unique<PromptHead>(store_, "prompt_head", backbone_->hidden_size(), embed, config_.prompt_encoder,
                                       config_.training.use_mdn, rng);
  content_ = std::make_unique<ContentEncoder>(store_, "content", config_.acoustic, phones_.size(), embed, rng);
  variance_style_ = nn::Linear(store_, "variance.style", embed, hidden, rng);
  duration_ = std::make_unique<DurationPredictor>(store_, "variance.duration", config_.acoustic, rng);
  pitch_ = std::make_unique<PitchPredictor>(store_, "variance.pitch", config_.acoustic, rng);
  decoder_style_ = nn::Linear(store_, "decoder.style", embed, hidden, rng);
  decoder_ = std::make_unique<DiffusionDecoder>(store_, "decoder", config_.acoustic, n_mels, hidden, rng);
  templates_ = default_templates();
  lexicon_ = default_lexicon();
}

Var PromptTTSModel::condition(const Var& frames_hidden, const Var& pitch_embedding, const Var& style) const {
  return ag::add_row(frames_hidden + pitch_embedding, decoder_style_(style));
}

LossTerms PromptTTSModel::losses(const TrainingExample& ex, const std::string& prompt, Rng& rng) const {
  const auto n_mels = static_cast<std::size_t>(config_.features.n_mels);
  if (ex.mel.size() != ex.frames * n_mels || ex.log_f0.size() != ex.frames || ex.vuv.size() != ex.frames)
    throw PipelineError(ex.utterance_id + ": feature shapes do not match the frame count");
  if (ex.phone_ids.size() != ex.durations.size())
    throw PipelineError(ex.utterance_id + ": phone and duration counts differ");
  Var mel = Var::constant(ex.frames, n_mels, ex.mel);
  Var ref = reference_->forward(mel);

  LossTerms out;
  Var text = backbone_->embed(prompt);
  if (head_->use_mdn()) {
    out.l_style = mdn_nll(head_->mixture(text), ref.detach());
  } else {
    out.l_style = cosine_loss(head_->direct(text), ref.detach());
  }

  Var hidden = ag::add_row(content_->forward(ex.phone_ids, ref), variance_style_(ref));
  out.l_dur = duration_->loss(duration_->forward(hidden), ex.durations);
  Var frames_h = length_regulate(hidden, ex.durations);
  if (frames_h.rows() != ex.frames) throw PipelineError(ex.utterance_id + ": regulated length mismatch");
  PitchOutputs pitch = pitch_->forward(frames_h, norm_.log_f0_mean);
  out.l_pitch = pitch_loss(pitch, ex.log_f0, ex.vuv);
  Var f0 = Var::constant(ex.frames, 1, ex.log_f0);
  Var uv = Var::constant(ex.frames, 1, std::vector<double>(ex.vuv.begin(), ex.vuv.end()));
  Var cond = condition(frames_h, pitch_->embed(f0, uv, norm_.log_f0_mean), ref);
  out.l_dec = diffusion_loss(decoder_->as_eps_net(), mel, cond, schedule_, rng);
  return out;
}

GMMParams PromptTTSModel::prompt_mixture(const std::string& prompt) const {
  if (!head_->use_mdn()) throw PipelineError("the model was trained without the mixture head");
  ag::NoGradGuard guard;
  return head_->mixture(backbone_->embed(prompt)).row(0);
}

std::vector<double> PromptTTSModel::prompt_style(const std::string& prompt, MdnMode mode, double temperature,
                                                 Rng& rng) const {
  ag::NoGradGuard guard;
  Var text = backbone_->embed(prompt);
  if (head_->use_mdn()) return mdn_sample(head_->mixture(text).row(0), rng, temperature, mode);
  std::vector<double> v = head_->direct(text).value();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw PipelineError("prompt embedding has zero norm");
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> PromptTTSModel::reference_style(std::span<const double> mel, std::size_t frames) const {
  ag::NoGradGuard guard;
  return reference_->encode(mel, frames);
}

PromptTTSModel::Decoded PromptTTSModel::decode(const std::vector<std::size_t>& phone_ids,
                                               std::span<const double> style, Rng& diffusion_rng) const {
  if (style.size() != reference_->embed_dim()) throw PipelineError("style embedding has the wrong dimension");
  ag::NoGradGuard guard;
  Var s = Var::row(std::vector<double>(style.begin(), style.end()));
  Var hidden = ag::add_row(content_->forward(phone_ids, s), variance_style_(s));
  Decoded out;
  out.durations = infer_durations(duration_->forward(hidden), DurationMode::kArgmax);
  Var frames_h = length_regulate(hidden, out.durations);
  out.frames = frames_h.rows();
  PitchOutputs pitch = pitch_->forward(frames_h, norm_.log_f0_mean);
  std::vector<double> uv(out.frames);
  for (std::size_t t = 0; t < out.frames; ++t) uv[t] = pitch.vuv.value()[t] >= 0.5 ? 1.0 : 0.0;
  Var cond = condition(frames_h, pitch_->embed(pitch.log_f0, Var::constant(out.frames, 1, std::move(uv)),
                                               norm_.log_f0_mean), s);
  out.mel = generate(decoder_->as_eps_net(), cond, decoder_->n_mels(), schedule_, diffusion_rng);
  return out;
}

// ---- checkpoints ----

namespace {
constexpr const char* kCheckpointKind = "promptts-checkpoint";
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PromptTTSModel& model, const nn::AdamW* optimizer,
                     const TrainProgress& progress, const Rng* rng) {
  Archive a;
  auto& m = a.meta();
  m["kind"] = kCheckpointKind;
  m["config"] = config_to_json(model.config());
  m["config_hash"] = hex_hash(config_hash(model.config()));
  m["phones"] = model.phones().symbols();
  m["templates"] = templates_to_json(model.templates());
  m["lexicon"] = model.lexicon().to_json();
  m["backbone"] = model.backbone().id();
  m["schedule"] = model.schedule().to_json();
  m["progress"] = {{"step", progress.step}, {"epoch", progress.epoch}, {"cursor", progress.cursor}};
  if (rng) m["rng"] = rng->serialize();
  model.store().save(a);
  model.normalization().save(a);
  if (optimizer) optimizer->save(a);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  a.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  LoadedCheckpoint out;
  out.archive = Archive::load(path);
  const auto& m = out.archive.meta();
  if (m.value("kind", "") != kCheckpointKind) throw PipelineError(path.string() + " is not a checkpoint");
  Config config;
  try {
    config = resolve_config(m.at("config"));
  } catch (const ConfigError& e) {
    throw PipelineError("incompatible checkpoint config: " + std::string(e.what()));
  }
  if (hex_hash(config_hash(config)) != m.at("config_hash").get<std::string>())
    throw PipelineError("incompatible checkpoint config: hash mismatch");
  out.model = std::make_unique<PromptTTSModel>(config, PhoneSet(m.at("phones").get<std::vector<std::string>>()));
  if (out.model->backbone().id() != m.at("backbone").get<std::string>())
    throw PipelineError("incompatible checkpoint: backbone differs");
  try {
    out.model->store().load(out.archive);
  } catch (const std::exception& e) {
    throw PipelineError("incompatible checkpoint parameters: " + std::string(e.what()));
  }
  out.model->normalization() = Normalization::load(out.archive);
  out.model->templates() = templates_from_json(m.at("templates"));
  out.model->lexicon() = Lexicon::from_json(m.at("lexicon"));
  const auto& p = m.at("progress");
  out.progress = {p.at("step").get<std::size_t>(), p.at("epoch").get<std::size_t>(), p.at("cursor").get<std::size_t>()};
  return out;
}

// ---- training ----

json StepLog::to_json() const {
  json j = {{"split", split}, {"step", step}, {"epoch", epoch}, {"lr", lr}, {"grad_norm", grad_norm}, {"items", items}};
  j.update(loss.to_json());
  return j;
}

Trainer::Trainer(const Config& config, PhoneSet phones, Normalization norm, std::vector<TrainingExample> train,
                 std::vector<TrainingExample> validation, TrainerOptions options)
    : config_(config),
      train_(std::move(train)),
      validation_(std::move(validation)),
      options_(std::move(options)),
      rng_(derive_seed(config.training.seed, "train")),
      weights_(LossWeights::from_config(config.training)) {
  if (train_.empty()) throw PipelineError("no training examples");
  model_ = std::make_unique<PromptTTSModel>(config_, std::move(phones));
  model_->normalization() = std::move(norm);
  const auto& t = config_.training;
  optimizer_ = std::make_unique<nn::AdamW>(
      model_->store(), nn::AdamWOptions{t.adam_beta1, t.adam_beta2, t.adam_eps, t.weight_decay, t.grad_clip});
  frames_.reserve(train_.size());
  for (const auto& ex : train_) frames_.push_back(ex.frames);
  batch_by_frames(frames_, static_cast<std::size_t>(t.max_frames));  // fail early on oversize records
}

void Trainer::resume(const std::filesystem::path& checkpoint) {
  Archive a = Archive::load(checkpoint);
  const auto& m = a.meta();
  if (m.value("kind", "") != kCheckpointKind) throw PipelineError(checkpoint.string() + " is not a checkpoint");
  if (m.at("config_hash").get<std::string>() != hex_hash(config_hash(config_)))
    throw PipelineError("cannot resume: checkpoint config differs from the run config");
  if (m.at("phones").get<std::vector<std::string>>() != model_->phones().symbols())
    throw PipelineError("cannot resume: phone inventory differs");
  if (!m.contains("rng") || !m.contains("optimizer")) throw PipelineError("cannot resume: no training state");
  model_->store().load(a);
  model_->normalization() = Normalization::load(a);
  model_->templates() = templates_from_json(m.at("templates"));
  model_->lexicon() = Lexicon::from_json(m.at("lexicon"));
  optimizer_->load(a);
  rng_.deserialize(m.at("rng").get<std::string>());
  const auto& p = m.at("progress");
  progress_ = {p.at("step").get<std::size_t>(), p.at("epoch").get<std::size_t>(), p.at("cursor").get<std::size_t>()};
}

bool Trainer::finished() const {
  const auto& t = config_.training;
  if (t.max_steps > 0) return progress_.step >= static_cast<std::size_t>(t.max_steps);
  return progress_.epoch >= static_cast<std::size_t>(t.epochs);
}

std::vector<Batch> Trainer::batches_for(std::size_t epoch) const {
  return epoch_batches(frames_, static_cast<std::size_t>(config_.training.max_frames), config_.training.seed, epoch);
}

std::string Trainer::sample_prompt(const TrainingExample& ex, Rng& rng) const {
  const std::string style = render_style_prompt(ex.levels, ex.gender, model_->templates(), model_->lexicon(), rng);
  std::optional<std::string> speaker;
  if (config_.training.use_speaker_prompt) speaker = ex.speaker_prompt;
  return compose_prompt(speaker, style);
}

StepLog Trainer::step() {
  if (finished()) throw PipelineError("training is already finished");
  if (cached_epoch_ != progress_.epoch) {
    epoch_cache_ = batches_for(progress_.epoch);
    cached_epoch_ = progress_.epoch;
  }
  const Batch& batch = epoch_cache_.at(progress_.cursor);
  auto& store = model_->store();
  store.zero_grad();

  StepLog log;
  log.step = progress_.step + 1;
  log.epoch = progress_.epoch;
  log.items = batch.size();
  log.lr = lr_schedule(log.step, config_.training.base_lr, static_cast<std::size_t>(config_.training.warmup_steps));

  std::vector<LossBreakdown> items;
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossBreakdown sum;
  for (auto idx : batch) {
    const auto& ex = train_[idx];
    const std::string prompt = sample_prompt(ex, rng_);
    LossBreakdown b;
    Var total = total_loss(model_->losses(ex, prompt, rng_), weights_, &b);
    items.push_back(b);
    if (!b.finite()) abort_non_finite(batch, b, items);
    (total * scale).backward();
    sum.l_dec += b.l_dec * scale;
    sum.l_dur += b.l_dur * scale;
    sum.l_pitch += b.l_pitch * scale;
    sum.l_style += b.l_style * scale;
  }
  sum.total = sum.l_dec + sum.l_dur + sum.l_pitch + sum.l_style;
  log.loss = sum;

  const double norm = nn::global_grad_norm(store);
  if (!std::isfinite(norm)) abort_non_finite(batch, sum, items);
  log.grad_norm = optimizer_->step(log.lr);

  ++progress_.step;
  if (++progress_.cursor >= epoch_cache_.size()) {
    progress_.cursor = 0;
    ++progress_.epoch;
  }

  const auto& t = config_.training;
  if (progress_.step == 1 || progress_.step % static_cast<std::size_t>(t.log_every) == 0) write_log(log);
  if (options_.on_log) options_.on_log(log);
  if (progress_.step % static_cast<std::size_t>(t.checkpoint_every) == 0) {
    if (!validation_.empty()) {
      StepLog v;
      v.split = "validation";
      v.step = progress_.step;
      v.epoch = progress_.epoch;
      v.items = validation_.size();
      v.loss = validate();
      write_log(v);
      if (options_.on_log) options_.on_log(v);
    }
    if (options_.write_checkpoints && !options_.output_dir.empty()) {
      const auto dir = options_.output_dir / "checkpoints";
      save(dir / ("step_" + std::to_string(progress_.step) + ".ckpt"));
      save(dir / "latest.ckpt");
    }
  }
  return log;
}

StepLog Trainer::run() {
  StepLog last;
  while (!finished()) last = step();
  return last;
}

LossBreakdown Trainer::validate() const {
  ag::NoGradGuard guard;
  Rng rng(derive_seed(config_.training.seed, "validation"));
  LossBreakdown sum;
  if (validation_.empty()) return sum;
  const double scale = 1.0 / static_cast<double>(validation_.size());
  for (const auto& ex : validation_) {
    const std::string prompt = sample_prompt(ex, rng);
    LossBreakdown b;
    total_loss(model_->losses(ex, prompt, rng), weights_, &b);
    sum.l_dec += b.l_dec * scale;
    sum.l_dur += b.l_dur * scale;
    sum.l_pitch += b.l_pitch * scale;
    sum.l_style += b.l_style * scale;
  }
  sum.total = sum.l_dec + sum.l_dur + sum.l_pitch + sum.l_style;
  return sum;
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, *model_, optimizer_.get(), progress_, &rng_);
}

void Trainer::write_log(const StepLog& log) const {
  spdlog::debug("{}", log.to_json().dump());
  if (options_.output_dir.empty()) return;
  std::filesystem::create_directories(options_.output_dir);
  std::ofstream out(options_.output_dir / "train_log.jsonl", std::ios::app);
  out << log.to_json().dump() << '\n';
}

void Trainer::abort_non_finite(const Batch& batch, const LossBreakdown& loss,
                               const std::vector<LossBreakdown>& items) const {
  json dump = {{"step", progress_.step + 1}, {"epoch", progress_.epoch}, {"loss", loss.to_json()}};
  json rows = json::array();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = train_[batch[i]];
    json r = {{"utterance_id", ex.utterance_id}, {"speaker_id", ex.speaker_id}, {"frames", ex.frames},
              {"phones", ex.phone_ids.size()}};
    if (i < items.size()) r["loss"] = items[i].to_json();
    rows.push_back(std::move(r));
  }
  dump["batch"] = std::move(rows);
  std::filesystem::path path;
  if (!options_.output_dir.empty()) {
    path = options_.output_dir / ("nan_dump_step_" + std::to_string(progress_.step + 1) + ".json");
    std::filesystem::create_directories(options_.output_dir);
    std::ofstream(path) << dump.dump(2) << '\n';
  }
  spdlog::error("non-finite loss at step {}: {}", progress_.step + 1, dump.dump());
  throw NonFiniteLossError("non-finite loss at step " + std::to_string(progress_.step + 1), path);
}

TrainResult train(const Config& config, const std::optional<std::filesystem::path>& resume_from,
                  std::function<void(const StepLog&)> on_log) {
  Dataset data = load_dataset(config);
  const SpeakerSplit split =
      split_speakers(data.records, config.training.validation_speaker_fraction, config.training.seed);
  const std::set<std::string> val(split.validation_speakers.begin(), split.validation_speakers.end());
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    (val.count(data.records[i].speaker_id) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) throw PipelineError("no training speakers after the validation split");
  const Normalization norm =
      Normalization::fit(data.features, train_idx, static_cast<std::size_t>(config.features.n_mels));

  TrainerOptions options;
  options.output_dir = config.data.output_dir;
  options.on_log = std::move(on_log);
  Trainer trainer(config, data.phones, norm, make_examples(data, norm, train_idx), make_examples(data, norm, val_idx),
                  options);
  trainer.model().templates() = data.templates;
  trainer.model().lexicon() = data.lexicon;
  if (resume_from) trainer.resume(*resume_from);

  TrainResult result;
  result.last = trainer.run();
  const std::filesystem::path dir = config.data.output_dir.empty() ? "." : config.data.output_dir;
  result.final_checkpoint = dir / "final.ckpt";
  trainer.save(result.final_checkpoint);
  return result;
}

// ---- synthesis ----

std::vector<std::size_t> resolve_phonemes(const std::string& text, const PhoneSet& phones,
                                          const std::vector<UtteranceRecord>& known) {
  std::istringstream in(text);
  std::vector<std::string> tokens;
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  if (tokens.empty()) throw PipelineError("input text is empty");
  auto unknown = std::find_if(tokens.begin(), tokens.end(), [&](const auto& t) { return !phones.contains(t); });
  if (unknown == tokens.end()) return phones.ids(tokens);
  for (const auto& r : known)
    if (r.text == text) return phones.ids(r.phonemes);
  throw PipelineError("unknown phoneme symbol '" + *unknown + "'");
}

namespace {

SynthesisResult finish_synthesis(const PromptTTSModel& model, const std::vector<std::size_t>& phone_ids,
                                 std::vector<double> style, const SynthesisOptions& options) {
  Rng rng(derive_seed(options.diffusion_seed, "diffusion"));
  auto decoded = model.decode(phone_ids, style, rng);
  SynthesisResult out;
  const auto& fc = model.config().features;
  out.mel.frames = decoded.frames;
  out.mel.n_mels = static_cast<std::size_t>(fc.n_mels);
  out.mel.values = model.normalization().denormalize(decoded.mel);
  out.mel.hop_seconds = fc.hop_ms / 1000.0;
  out.mel.window_seconds = fc.win_ms / 1000.0;
  out.style = std::move(style);
  out.durations = std::move(decoded.durations);
  return out;
}

}  // namespace

SynthesisResult synthesize(const PromptTTSModel& model, const std::vector<std::size_t>& phone_ids,
                           const std::optional<std::string>& speaker_prompt, const std::string& style_prompt,
                           const SynthesisOptions& options) {
  if (!(options.temperature > 0.0)) throw PipelineError("temperature must be positive");
  std::optional<std::string> speaker = speaker_prompt;
  if (speaker && speaker->find_first_not_of(" \t") == std::string::npos) speaker.reset();
  const std::string prompt = compose_prompt(speaker, style_prompt);
  Rng rng(derive_seed(options.seed, "style"));
  auto result = finish_synthesis(model, phone_ids, model.prompt_style(prompt, options.mode, options.temperature, rng),
                                 options);
  result.prompt = prompt;
  return result;
}

SynthesisResult synthesize_from_reference(const PromptTTSModel& model, const std::vector<std::size_t>& phone_ids,
                                          const Waveform& reference, const SynthesisOptions& options) {
  const MelSpectrogram mel = compute_logmel(reference, model.config().features);
  const auto style = model.reference_style(model.normalization().normalize(mel.values), mel.frames);
  return finish_synthesis(model, phone_ids, style, options);
}

// ---- embedding analysis ----

std::string_view to_string(EmbeddingSource s) { return s == EmbeddingSource::kReference ? "reference" : "prompt"; }

EmbeddingSource parse_embedding_source(std::string_view s) {
  if (s == "reference") return EmbeddingSource::kReference;
  if (s == "prompt") return EmbeddingSource::kPrompt;
  throw PipelineError("unknown embedding source '" + std::string(s) + "'");
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw PipelineError("cosine similarity of a zero vector");
  return ab / std::sqrt(aa * bb);
}

}  // namespace

Separation separation_score(const std::vector<std::vector<double>>& emb, const std::vector<std::string>& speakers) {
  if (emb.size() != speakers.size()) throw PipelineError("embedding and speaker counts differ");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      const double c = cosine(emb[i], emb[j]);
      if (speakers[i] == speakers[j]) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  if (n_intra == 0 || n_inter == 0) throw PipelineError("separation needs two speakers with two utterances each");
  Separation s;
  s.intra = intra / static_cast<double>(n_intra);
  s.inter = inter / static_cast<double>(n_inter);
  s.score = s.intra - s.inter;
  return s;
}

std::string EmbeddingReport::to_table() const {
  std::ostringstream out;
  char buf[64];
  out << "# method\t" << method << '\n';
  out << "# seed\t" << seed << '\n';
  std::snprintf(buf, sizeof buf, "%.9g", intra_similarity);
  out << "# intra_similarity\t" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.9g", inter_similarity);
  out << "# inter_similarity\t" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.9g", separation);
  out << "# separation\t" << buf << '\n';
  out << "utterance_id\tspeaker_id\tsource\tx\ty\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g\t%.9g", r.x, r.y);
    out << r.utterance_id << '\t' << r.speaker_id << '\t' << to_string(r.source) << '\t' << buf << '\n';
  }
  return out.str();
}

EmbeddingReport analyze_embeddings(const PromptTTSModel& model, const std::vector<TrainingExample>& examples,
                                   const AnalysisOptions& options) {
  std::map<std::string, std::size_t> per_speaker;
  for (const auto& ex : examples) ++per_speaker[ex.speaker_id];
  if (per_speaker.size() < 2) throw PipelineError("analysis needs at least 2 speakers");
  for (const auto& [spk, n] : per_speaker)
    if (n < 2) throw PipelineError("speaker '" + spk + "' has fewer than 2 utterances");

  const bool use_speaker = options.use_speaker_prompt.value_or(model.config().training.use_speaker_prompt);
  Rng rng(derive_seed(options.seed, "analysis"));
  std::vector<std::vector<double>> emb;
  std::vector<std::string> speakers;
  emb.reserve(examples.size());
  for (const auto& ex : examples) {
    if (options.source == EmbeddingSource::kReference) {
      emb.push_back(model.reference_style(ex.mel, ex.frames));
    } else {
      const std::string style = render_style_prompt(ex.levels, ex.gender, model.templates(), model.lexicon(), rng);
      const std::optional<std::string> speaker = use_speaker ? ex.speaker_prompt : std::nullopt;
      emb.push_back(model.prompt_style(compose_prompt(speaker, style), MdnMode::kArgmax, 1.0, rng));
    }
    speakers.push_back(ex.speaker_id);
  }

  EmbeddingReport report;
  report.seed = options.seed;
  const auto coords = options.projection == Projection::kPca ? pca_2d(emb) : tsne_2d(emb, options.seed);
  report.method = options.projection == Projection::kPca ? "pca" : "tsne";
  const Separation s = separation_score(emb, speakers);
  report.intra_similarity = s.intra;
  report.inter_similarity = s.inter;
  report.separation = s.score;
  for (std::size_t i = 0; i < examples.size(); ++i)
    report.rows.push_back({examples[i].utterance_id, examples[i].speaker_id, coords[i][0], coords[i][1],
                           options.source});
  return report;
}

// ---- files ----

void write_npy(const std::filesystem::path& path, std::span<const double> data, std::size_t rows, std::size_t cols) {
  static_assert(std::endian::native == std::endian::little, "write_npy assumes a little-endian host");
  if (data.size() != rows * cols) throw PipelineError("write_npy: shape does not match the data");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(rows) + ", " +
                       std::to_string(cols) + "), }";
  const std::size_t prefix = 10;
  const std::size_t total = (prefix + header.size() + 1 + 63) / 64 * 64;
  header.append(total - prefix - header.size() - 1, ' ');
  header.push_back('\n');
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PipelineError("cannot write " + path.string());
  const char magic[] = {'\x93', 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.write(magic, sizeof magic);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

}  // namespace promptts
