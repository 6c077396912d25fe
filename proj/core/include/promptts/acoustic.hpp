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

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptts/config.hpp"
#include "promptts/dataio.hpp"
#include "promptts/encoders.hpp"
#include "promptts/nn.hpp"

namespace promptts {

class AcousticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered phone inventory.
class PhoneSet {
 public:
  PhoneSet() = default;
  explicit PhoneSet(std::vector<std::string> symbols);
  static PhoneSet from_records(const std::vector<UtteranceRecord>& records);

  std::size_t size() const { return symbols_.size(); }
  std::size_t id(const std::string& phone) const;
  std::vector<std::size_t> ids(const std::vector<std::string>& phones) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  bool contains(const std::string& phone) const { return index_.count(phone) != 0; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, std::size_t> index_;
};

// ---- content encoder ----

class ConformerBlock {
 public:
  ConformerBlock(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;

 private:
  struct FeedForward {
    nn::LayerNorm norm;
    nn::Linear up, down;
  };
  ag::Var feed_forward(const FeedForward& ff, const ag::Var& x) const;

  FeedForward ff1_, ff2_;
  nn::LayerNorm attn_norm_;
  nn::MultiHeadSelfAttention attention_;
  nn::LayerNorm conv_norm_;
  nn::Linear pointwise_in_;
  ag::Var depthwise_;
  nn::LayerNorm depthwise_norm_;
  nn::Linear pointwise_out_;
  nn::LayerNorm final_norm_;
};

/// Phone embedding with sinusoidal positions, Conformer blocks, and a style
/// bias added to every output row.
class ContentEncoder {
 public:
  ContentEncoder(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                 std::size_t num_phones, std::size_t style_dim, Rng& rng);

  /// Phone ids and style [1 x style_dim] -> [phones x hidden].
  ag::Var forward(const std::vector<std::size_t>& phone_ids, const ag::Var& style) const;

 private:
  ag::Var embedding_;
  std::vector<ConformerBlock> blocks_;
  nn::Linear style_bias_;
  std::size_t hidden_;
};

// ---- variance adaptor ----

/// Two conv-ReLU-LayerNorm stages followed by a linear projection.
class VariancePredictor {
 public:
  VariancePredictor(nn::ParameterStore& store, const std::string& name, std::size_t in, std::size_t filter,
                    std::size_t kernel, std::size_t out, Rng& rng, nn::Init out_init = nn::Init::kXavier);
  ag::Var operator()(const ag::Var& x) const;

 private:
  nn::Conv1d conv1_, conv2_;
  nn::LayerNorm norm1_, norm2_;
  nn::Linear out_;
};

enum class DurationMode { kArgmax, kSample };

/// Per-phone K-component GMM over log-durations.
class DurationPredictor {
 public:
  DurationPredictor(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config, Rng& rng);

  GmmVars forward(const ag::Var& hidden) const;
  /// NLL of log(max(d, 1)) averaged over phones.
  ag::Var loss(const GmmVars& gmm, const std::vector<std::size_t>& durations) const;
  std::size_t components() const { return components_; }

 private:
  VariancePredictor net_;
  std::size_t components_;
  double scale_floor_;
};

/// Duration log-target for a frame count.
double duration_target(std::size_t frames);
/// Frames from per-phone mixtures: exp(mean of the heaviest component), or
/// of a drawn component in sampling mode, rounded half-up, at least 1.
std::vector<std::size_t> infer_durations(const GmmVars& gmm, DurationMode mode = DurationMode::kArgmax,
                                         Rng* rng = nullptr);
std::size_t round_duration(double log_duration);

struct PitchOutputs {
  ag::Var log_f0;  // [frames x 1]
  ag::Var vuv;     // [frames x 1], probabilities
};

class PitchPredictor {
 public:
  PitchPredictor(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config, Rng& rng);

  /// log_f0 = raw + log_f0_mean, vuv = sigmoid(raw).
  PitchOutputs forward(const ag::Var& frames_hidden, double log_f0_mean) const;
  /// Embeds (log_f0 - mean, vuv) into the hidden size.
  ag::Var embed(const ag::Var& log_f0, const ag::Var& vuv, double log_f0_mean) const;

 private:
  VariancePredictor net_;
  nn::Linear embedding_;
};

/// Mean |log_f0_hat - log_f0| plus mean |vuv_hat - vuv|.
ag::Var pitch_loss(const PitchOutputs& pred, std::span<const double> log_f0, std::span<const std::uint8_t> vuv);

/// Repeats row i of hidden durations[i] times. All-zero durations produce an
/// empty [0 x hidden] result and set *degenerate.
ag::Var length_regulate(const ag::Var& hidden, std::span<const std::size_t> durations, bool* degenerate = nullptr);
ag::Var length_regulate(const ag::Var& hidden, std::span<const long long> durations, bool* degenerate = nullptr);

// ---- diffusion ----

/// Betas, alphas and cumulative alpha products indexed by step t in 1..T.
class DiffusionSchedule {
 public:
  static DiffusionSchedule linear(std::size_t steps, double beta_start, double beta_end);
  /// Cosine alpha-bar schedule with offset s = 0.008, betas clipped to 0.999.
  static DiffusionSchedule cosine(std::size_t steps);
  static DiffusionSchedule from_betas(std::vector<double> betas);
  static DiffusionSchedule from_config(const AcousticConfig& config);

  std::size_t steps() const { return betas_.size(); }
  double beta(std::size_t t) const { return betas_.at(check(t) - 1); }
  double alpha(std::size_t t) const { return alphas_.at(check(t) - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(check(t) - 1); }
  /// Posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t, 0 at t = 1.
  double posterior_variance(std::size_t t) const;
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  nlohmann::json to_json() const;

 private:
  std::size_t check(std::size_t t) const;
  std::vector<double> betas_, alphas_, alpha_bars_;
};

/// Names of every built-in schedule.
std::vector<std::string> shipped_schedules();
DiffusionSchedule make_schedule(const std::string& name, std::size_t steps, double beta_start = 1e-4,
                                double beta_end = 0.06);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
std::vector<double> q_sample(std::span<const double> x0, std::size_t t, std::span<const double> noise,
                             const DiffusionSchedule& sched);
/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
std::vector<double> predict_x0(std::span<const double> x_t, std::size_t t, std::span<const double> eps,
                               const DiffusionSchedule& sched);
/// DDPM ancestral step with posterior variance; no noise at t = 1.
std::vector<double> denoise_step(std::span<const double> x_t, std::size_t t, std::span<const double> eps_hat,
                                 const DiffusionSchedule& sched, Rng& rng);

/// Noise predictor eps(x_t [N x M], t, cond [N x H]).
using EpsNet = std::function<ag::Var(const ag::Var& x_t, std::size_t t, const ag::Var& cond)>;

/// Residual stack of gated dilated convolutions with skip connections.
class DiffusionDecoder {
 public:
  DiffusionDecoder(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                   std::size_t n_mels, std::size_t cond_dim, Rng& rng);

  ag::Var predict_eps(const ag::Var& x_t, std::size_t t, const ag::Var& cond) const;
  EpsNet as_eps_net() const;
  std::size_t n_mels() const { return n_mels_; }

 private:
  struct Layer {
    nn::Linear diffusion_proj;
    nn::Conv1d dilated;
    nn::Linear cond_proj;
    nn::Linear output;
  };
  nn::Linear input_;
  nn::Linear step1_, step2_;
  std::vector<Layer> layers_;
  nn::Linear skip_;
  nn::Linear out_;
  std::size_t channels_;
  std::size_t n_mels_;
};

/// Runs the reverse chain from x_T ~ N(0, I). Output [frames x n_mels].
std::vector<double> generate(const EpsNet& eps_net, const ag::Var& cond, std::size_t n_mels,
                             const DiffusionSchedule& sched, Rng& rng);

/// Mean |eps(x_t, t) - noise| for a given step and noise.
ag::Var diffusion_loss(const EpsNet& eps_net, const ag::Var& x0, const ag::Var& cond, std::size_t t,
                       std::span<const double> noise, const DiffusionSchedule& sched);
/// Same with t ~ U{1..T} and noise ~ N(0, I) drawn from rng.
ag::Var diffusion_loss(const EpsNet& eps_net, const ag::Var& x0, const ag::Var& cond, const DiffusionSchedule& sched,
                       Rng& rng);

}  // namespace promptts
