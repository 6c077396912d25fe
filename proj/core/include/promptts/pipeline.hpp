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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptts/acoustic.hpp"
#include "promptts/archive.hpp"
#include "promptts/backbone.hpp"
#include "promptts/config.hpp"
#include "promptts/dataio.hpp"
#include "promptts/encoders.hpp"
#include "promptts/features.hpp"
#include "promptts/nn.hpp"
#include "promptts/promptgen.hpp"

namespace promptts {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a step produces a non-finite loss.
class NonFiniteLossError : public PipelineError {
 public:
  NonFiniteLossError(const std::string& what, std::filesystem::path dump)
      : PipelineError(what), dump_path(std::move(dump)) {}
  std::filesystem::path dump_path;
};

// ---- losses ----

/// Per-term losses as they enter the total (already multiplied by their
/// configured weights), so total is always their plain sum.
struct LossBreakdown {
  double l_dec = 0.0;
  double l_dur = 0.0;
  double l_pitch = 0.0;
  double l_style = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
  bool finite() const;
  bool operator==(const LossBreakdown&) const = default;
};

struct LossWeights {
  double dec = 1.0;
  double dur = 1.0;
  double pitch = 1.0;
  double style = 1.0;

  static LossWeights from_config(const TrainingConfig& t);
};

/// Differentiable loss terms of one item.
struct LossTerms {
  ag::Var l_dec, l_dur, l_pitch, l_style;
};

LossBreakdown total_loss(double l_dec, double l_dur, double l_pitch, double l_style,
                         const LossWeights& weights = {});
/// Weighted sum as a graph node plus its breakdown.
ag::Var total_loss(const LossTerms& terms, const LossWeights& weights, LossBreakdown* breakdown);

/// base_lr * warmup^0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
double lr_schedule(std::size_t step, double base_lr, std::size_t warmup_steps);

// ---- batching ----

using Batch = std::vector<std::size_t>;  // indices into the record list

/// Greedy packing of length-sorted items (ties by index) under a frame budget.
std::vector<Batch> batch_by_frames(std::span<const std::size_t> frames, std::size_t max_frames = 30000);
std::vector<Batch> batch_by_frames(const std::vector<UtteranceRecord>& records, std::size_t max_frames = 30000);
/// Packing for one epoch with the batch order shuffled by (seed, epoch).
std::vector<Batch> epoch_batches(std::span<const std::size_t> frames, std::size_t max_frames, std::uint64_t seed,
                                 std::size_t epoch);

// ---- training data ----

struct TrainingExample {
  std::string utterance_id;
  std::string speaker_id;
  Gender gender = Gender::kFemale;
  std::vector<std::size_t> phone_ids;
  std::vector<std::size_t> durations;
  std::size_t frames = 0;
  std::vector<double> mel;  // normalized, [frames x n_mels]
  std::vector<double> log_f0;
  std::vector<std::uint8_t> vuv;
  StyleLevels levels;
  std::optional<std::string> speaker_prompt;
};

/// Per-bin mel statistics and the mean log-F0 of the training set.
struct Normalization {
  std::vector<double> mel_mean;
  std::vector<double> mel_std;
  double log_f0_mean = 0.0;

  /// Statistics over the features at the given indices; per-bin std is
  /// floored at 1e-2.
  static Normalization fit(const std::vector<UtteranceFeatures>& features, std::span<const std::size_t> indices,
                           std::size_t n_mels);
  std::vector<double> normalize(std::span<const double> mel) const;
  std::vector<double> denormalize(std::span<const double> mel) const;
  void save(Archive& archive) const;
  static Normalization load(const Archive& archive);
};

struct Dataset {
  std::vector<UtteranceRecord> records;
  std::vector<UtteranceFeatures> features;
  PhoneSet phones;
  SpeakerPromptMap speaker_prompts;
  ThresholdTable thresholds;
  std::vector<PromptTemplate> templates;
  Lexicon lexicon;
};

/// Reads the manifest, speaker prompts, templates and lexicon named by the
/// config, and computes or loads features for every record. Relative audio
/// paths are resolved against the manifest directory.
Dataset load_dataset(const Config& config);
/// Phone set and style thresholds for in-memory records and features.
Dataset build_dataset(std::vector<UtteranceRecord> records, std::vector<UtteranceFeatures> features,
                      SpeakerPromptMap speaker_prompts, std::vector<PromptTemplate> templates = default_templates(),
                      Lexicon lexicon = default_lexicon());

/// Matches feature frames to the alignment: the mel is cropped or padded
/// with its last frame to sum(durations).
std::vector<TrainingExample> make_examples(const Dataset& data, const Normalization& norm,
                                           std::span<const std::size_t> indices);

// ---- model ----

class PromptTTSModel {
 public:
  PromptTTSModel(const Config& config, PhoneSet phones);
  PromptTTSModel(const PromptTTSModel&) = delete;
  PromptTTSModel& operator=(const PromptTTSModel&) = delete;

  const Config& config() const { return config_; }
  const PhoneSet& phones() const { return phones_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const TextBackbone& backbone() const { return *backbone_; }
  const ReferenceEncoder& reference_encoder() const { return *reference_; }
  const PromptHead& prompt_head() const { return *head_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  Normalization& normalization() { return norm_; }
  const Normalization& normalization() const { return norm_; }
  std::vector<PromptTemplate>& templates() { return templates_; }
  const std::vector<PromptTemplate>& templates() const { return templates_; }
  Lexicon& lexicon() { return lexicon_; }
  const Lexicon& lexicon() const { return lexicon_; }

  /// Loss terms for one example. The reference embedding conditions the
  /// acoustic model and, detached, is the prompt-encoder target.
  LossTerms losses(const TrainingExample& example, const std::string& prompt, Rng& rng) const;

  /// Unit-norm style embedding from a composed prompt.
  std::vector<double> prompt_style(const std::string& prompt, MdnMode mode, double temperature, Rng& rng) const;
  GMMParams prompt_mixture(const std::string& prompt) const;
  /// Unit-norm style embedding from a normalized mel [frames x n_mels].
  std::vector<double> reference_style(std::span<const double> normalized_mel, std::size_t frames) const;

  struct Decoded {
    std::vector<double> mel;  // normalized, [frames x n_mels]
    std::size_t frames = 0;
    std::vector<std::size_t> durations;
  };
  /// Argmax durations, predicted pitch, then the reverse diffusion chain.
  Decoded decode(const std::vector<std::size_t>& phone_ids, std::span<const double> style, Rng& diffusion_rng) const;

 private:
  ag::Var condition(const ag::Var& frames_hidden, const ag::Var& pitch_embedding, const ag::Var& style) const;

  Config config_;
  PhoneSet phones_;
  nn::ParameterStore store_;
  std::unique_ptr<TextBackbone> backbone_;
  std::unique_ptr<ReferenceEncoder> reference_;
  std::unique_ptr<PromptHead> head_;
  std::unique_ptr<ContentEncoder> content_;
  nn::Linear variance_style_;
  std::unique_ptr<DurationPredictor> duration_;
  std::unique_ptr<PitchPredictor> pitch_;
  nn::Linear decoder_style_;
  std::unique_ptr<DiffusionDecoder> decoder_;
  DiffusionSchedule schedule_;
  Normalization norm_;
  std::vector<PromptTemplate> templates_;
  Lexicon lexicon_;
};

// ---- checkpoints ----

struct TrainProgress {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t cursor = 0;  // next batch within the epoch
};

/// Writes parameters, normalization, prompt resources and, when given,
/// optimizer and training state.
void save_checkpoint(const std::filesystem::path& path, const PromptTTSModel& model, const nn::AdamW* optimizer,
                     const TrainProgress& progress, const Rng* rng);

struct LoadedCheckpoint {
  std::unique_ptr<PromptTTSModel> model;
  Archive archive;
  TrainProgress progress;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---- training ----

struct StepLog {
  std::string split = "train";
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t items = 0;
  LossBreakdown loss;

  nlohmann::json to_json() const;
};

struct TrainerOptions {
  std::filesystem::path output_dir;  // empty: no files written
  bool write_checkpoints = true;
  std::function<void(const StepLog&)> on_log;
};

/// Owns the model and optimizer for one run over prepared examples.
class Trainer {
 public:
  Trainer(const Config& config, PhoneSet phones, Normalization norm, std::vector<TrainingExample> train,
          std::vector<TrainingExample> validation = {}, TrainerOptions options = {});

  /// Continues from a checkpoint written by a trainer with the same config.
  void resume(const std::filesystem::path& checkpoint);

  /// One optimizer step on the next batch.
  StepLog step();
  /// Runs until max_steps (or epochs) is reached; returns the last log.
  StepLog run();
  LossBreakdown validate() const;

  bool finished() const;
  const TrainProgress& progress() const { return progress_; }
  PromptTTSModel& model() { return *model_; }
  const PromptTTSModel& model() const { return *model_; }
  const nn::AdamW& optimizer() const { return *optimizer_; }
  const Rng& rng() const { return rng_; }
  void save(const std::filesystem::path& path) const;

  /// Prompt for an example: a freshly rendered style prompt composed with
  /// the speaker prompt when enabled.
  std::string sample_prompt(const TrainingExample& example, Rng& rng) const;

 private:
  std::vector<Batch> batches_for(std::size_t epoch) const;
  void write_log(const StepLog& log) const;
  [[noreturn]] void abort_non_finite(const Batch& batch, const LossBreakdown& loss,
                                     const std::vector<LossBreakdown>& items) const;

  Config config_;
  std::unique_ptr<PromptTTSModel> model_;
  std::unique_ptr<nn::AdamW> optimizer_;
  std::vector<TrainingExample> train_;
  std::vector<TrainingExample> validation_;
  std::vector<std::size_t> frames_;
  TrainerOptions options_;
  TrainProgress progress_;
  Rng rng_;
  LossWeights weights_;
  std::vector<Batch> epoch_cache_;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
};

/// Builds examples from the dataset (speaker-level validation split, fitted
/// normalization) and trains. Checkpoints and logs go to data.output_dir.
struct TrainResult {
  std::filesystem::path final_checkpoint;
  StepLog last;
};
TrainResult train(const Config& config, const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                  std::function<void(const StepLog&)> on_log = {});

// ---- synthesis ----

struct SynthesisOptions {
  std::uint64_t seed = 0;
  MdnMode mode = MdnMode::kSample;
  double temperature = 1.0;
  /// Noise for the reverse diffusion chain; kept apart from the prompt seed
  /// so the argmax mode is seed-independent.
  std::uint64_t diffusion_seed = 0;
};

struct SynthesisResult {
  MelSpectrogram mel;  // denormalized log-mel
  std::vector<double> style;
  std::vector<std::size_t> durations;
  std::string prompt;
};

/// Phone ids for the input: whitespace-separated phone symbols, or the text
/// of a known record whose phonemes are then used.
std::vector<std::size_t> resolve_phonemes(const std::string& text, const PhoneSet& phones,
                                          const std::vector<UtteranceRecord>& known = {});

SynthesisResult synthesize(const PromptTTSModel& model, const std::vector<std::size_t>& phone_ids,
                           const std::optional<std::string>& speaker_prompt, const std::string& style_prompt,
                           const SynthesisOptions& options);
SynthesisResult synthesize_from_reference(const PromptTTSModel& model, const std::vector<std::size_t>& phone_ids,
                                          const Waveform& reference, const SynthesisOptions& options);

// ---- embedding analysis ----

enum class EmbeddingSource { kReference, kPrompt };
enum class Projection { kPca, kTsne };

std::string_view to_string(EmbeddingSource s);
EmbeddingSource parse_embedding_source(std::string_view s);

struct EmbeddingRow {
  std::string utterance_id;
  std::string speaker_id;
  double x = 0.0;
  double y = 0.0;
  EmbeddingSource source = EmbeddingSource::kReference;
};

struct EmbeddingReport {
  std::vector<EmbeddingRow> rows;
  std::string method;  // "pca" or "tsne"
  std::uint64_t seed = 0;
  double intra_similarity = 0.0;
  double inter_similarity = 0.0;
  double separation = 0.0;

  std::string to_table() const;
};

struct Separation {
  double intra = 0.0;
  double inter = 0.0;
  double score = 0.0;
};

/// Mean intra-speaker cosine similarity minus mean inter-speaker cosine
/// similarity over all unordered pairs.
Separation separation_score(const std::vector<std::vector<double>>& embeddings,
                            const std::vector<std::string>& speakers);

/// Rows of the first two principal components, with each axis signed so its
/// largest-magnitude loading is positive.
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& points);
/// Exact t-SNE into two dimensions.
std::vector<std::array<double, 2>> tsne_2d(const std::vector<std::vector<double>>& points, std::uint64_t seed,
                                           double perplexity = 30.0, std::size_t iterations = 500);

struct AnalysisOptions {
  EmbeddingSource source = EmbeddingSource::kPrompt;
  Projection projection = Projection::kPca;
  std::uint64_t seed = 0;
  /// Compose speaker prompts into the prompts; empty follows the model's
  /// training setting.
  std::optional<bool> use_speaker_prompt;
};

/// Embeds every example (prompt path: argmax of the mixture for a rendered
/// prompt) and projects to 2-D.
EmbeddingReport analyze_embeddings(const PromptTTSModel& model, const std::vector<TrainingExample>& examples,
                                   const AnalysisOptions& options);

// ---- files ----

/// NumPy .npy, little-endian float64, C order.
void write_npy(const std::filesystem::path& path, std::span<const double> data, std::size_t rows, std::size_t cols);

}  // namespace promptts
