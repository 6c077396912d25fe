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

#include "promptts/acoustic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace promptts {

using ag::Var;

PhoneSet::PhoneSet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], i).second) throw AcousticError("duplicate phone symbol '" + symbols_[i] + "'");
  }
}

PhoneSet PhoneSet::from_records(const std::vector<UtteranceRecord>& records) {
  std::set<std::string> all;
  for (const auto& r : records) all.insert(r.phonemes.begin(), r.phonemes.end());
  return PhoneSet(std::vector<std::string>(all.begin(), all.end()));
}

std::size_t PhoneSet::id(const std::string& phone) const {
  auto it = index_.find(phone);
  if (it == index_.end()) throw AcousticError("unknown phoneme symbol '" + phone + "'");
  return it->second;
}

std::vector<std::size_t> PhoneSet::ids(const std::vector<std::string>& phones) const {
  std::vector<std::size_t> out;
  out.reserve(phones.size());
  for (const auto& p : phones) out.push_back(id(p));
  return out;
}

// ---------------------------------------------------------------------------

ConformerBlock::ConformerBlock(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                               Rng& rng) {
  const auto h = static_cast<std::size_t>(config.hidden);
  const auto ffh = h * static_cast<std::size_t>(config.conformer_ff_mult);
  auto make_ff = [&](const std::string& n) {
    FeedForward ff;
    ff.norm = nn::LayerNorm(store, n + ".norm", h, rng);
    ff.up = nn::Linear(store, n + ".up", h, ffh, rng);
    ff.down = nn::Linear(store, n + ".down", ffh, h, rng);
    return ff;
  };
  ff1_ = make_ff(name + ".ff1");
  attn_norm_ = nn::LayerNorm(store, name + ".attn_norm", h, rng);
  attention_ = nn::MultiHeadSelfAttention(store, name + ".attn", h, static_cast<std::size_t>(config.conformer_heads), rng);
  conv_norm_ = nn::LayerNorm(store, name + ".conv_norm", h, rng);
  pointwise_in_ = nn::Linear(store, name + ".pointwise_in", h, 2 * h, rng);
  depthwise_ = store.add(name + ".depthwise", static_cast<std::size_t>(config.conformer_kernel), h, nn::Init::kXavier, rng);
  depthwise_norm_ = nn::LayerNorm(store, name + ".depthwise_norm", h, rng);
  pointwise_out_ = nn::Linear(store, name + ".pointwise_out", h, h, rng);
  ff2_ = make_ff(name + ".ff2");
  final_norm_ = nn::LayerNorm(store, name + ".final_norm", h, rng);
}

Var ConformerBlock::feed_forward(const FeedForward& ff, const Var& x) const {
  return ff.down(ag::swish(ff.up(ff.norm(x))));
}

Var ConformerBlock::operator()(const Var& input) const {
  Var x = input + feed_forward(ff1_, input) * 0.5;
  x = x + attention_(attn_norm_(x));
  Var y = pointwise_in_(conv_norm_(x));
  const std::size_t h = x.cols();
  y = ag::slice_cols(y, 0, h) * ag::sigmoid(ag::slice_cols(y, h, h));
  y = pointwise_out_(ag::swish(depthwise_norm_(ag::depthwise_conv1d(y, depthwise_))));
  x = x + y;
  x = x + feed_forward(ff2_, x) * 0.5;
  return final_norm_(x);
}

ContentEncoder::ContentEncoder(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                               std::size_t num_phones, std::size_t style_dim, Rng& rng)
    : hidden_(static_cast<std::size_t>(config.hidden)) {
  if (num_phones == 0) throw AcousticError("phone inventory is empty");
  embedding_ = store.add(name + ".phone_embedding", num_phones, hidden_, nn::Init::kXavier, rng);
  for (int i = 0; i < config.conformer_blocks; ++i)
    blocks_.emplace_back(store, name + ".block" + std::to_string(i), config, rng);
  style_bias_ = nn::Linear(store, name + ".style_bias", style_dim, hidden_, rng);
}

Var ContentEncoder::forward(const std::vector<std::size_t>& phone_ids, const Var& style) const {
  if (phone_ids.empty()) throw AcousticError("phoneme sequence is empty");
  for (auto id : phone_ids)
    if (id >= embedding_.rows()) throw AcousticError("phone id out of range");
  Var x = ag::gather_rows(embedding_, phone_ids) +
          Var::constant(phone_ids.size(), hidden_, nn::sinusoidal_table(phone_ids.size(), hidden_));
  for (const auto& b : blocks_) x = b(x);
  return ag::add_row(x, style_bias_(style));
}

// ---------------------------------------------------------------------------

VariancePredictor::VariancePredictor(nn::ParameterStore& store, const std::string& name, std::size_t in,
                                     std::size_t filter, std::size_t kernel, std::size_t out, Rng& rng,
                                     nn::Init out_init)
    : conv1_(store, name + ".conv1", in, filter, kernel, 1, rng),
      conv2_(store, name + ".conv2", filter, filter, kernel, 1, rng),
      norm1_(store, name + ".norm1", filter, rng),
      norm2_(store, name + ".norm2", filter, rng),
      out_(store, name + ".out", filter, out, rng, out_init) {}

Var VariancePredictor::operator()(const Var& x) const {
  Var y = norm1_(ag::relu(conv1_(x)));
  y = norm2_(ag::relu(conv2_(y)));
  return out_(y);
}

DurationPredictor::DurationPredictor(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                                     Rng& rng)
    : net_(store, name, static_cast<std::size_t>(config.hidden), static_cast<std::size_t>(config.variance_filter),
           static_cast<std::size_t>(config.variance_kernel), 3 * static_cast<std::size_t>(config.duration_mixtures),
           rng),
      components_(static_cast<std::size_t>(config.duration_mixtures)),
      scale_floor_(config.duration_scale_floor) {}

GmmVars DurationPredictor::forward(const Var& hidden) const {
  return split_mixture(net_(hidden), components_, 1, scale_floor_);
}

double duration_target(std::size_t frames) { return std::log(static_cast<double>(std::max<std::size_t>(frames, 1))); }

Var DurationPredictor::loss(const GmmVars& gmm, const std::vector<std::size_t>& durations) const {
  if (durations.size() != gmm.logits.rows()) throw AcousticError("duration target count does not match phones");
  std::vector<double> t(durations.size());
  for (std::size_t i = 0; i < durations.size(); ++i) t[i] = duration_target(durations[i]);
  return mdn_nll(gmm, Var::constant(durations.size(), 1, std::move(t)));
}

std::size_t round_duration(double log_duration) {
  const double frames = std::floor(std::exp(log_duration) + 0.5);
  return frames < 1.0 ? 1 : static_cast<std::size_t>(frames);
}

std::vector<std::size_t> infer_durations(const GmmVars& gmm, DurationMode mode, Rng* rng) {
  if (mode == DurationMode::kSample && rng == nullptr) throw AcousticError("duration sampling needs an rng");
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < gmm.logits.rows(); ++r) {
    const GMMParams p = gmm.row(r);
    if (mode == DurationMode::kArgmax) {
      const auto k = static_cast<std::size_t>(std::max_element(p.weights.begin(), p.weights.end()) - p.weights.begin());
      out.push_back(round_duration(p.means[k]));
    } else {
      out.push_back(round_duration(mdn_sample_raw(p, *rng)[0]));
    }
  }
  return out;
}

PitchPredictor::PitchPredictor(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                               Rng& rng)
    : net_(store, name, static_cast<std::size_t>(config.hidden), static_cast<std::size_t>(config.variance_filter),
           static_cast<std::size_t>(config.variance_kernel), 2, rng),
      embedding_(store, name + ".embedding", 2, static_cast<std::size_t>(config.hidden), rng) {}

PitchOutputs PitchPredictor::forward(const Var& frames_hidden, double log_f0_mean) const {
  if (frames_hidden.rows() == 0) throw AcousticError("pitch predictor needs at least one frame");
  Var raw = net_(frames_hidden);
  return {ag::slice_cols(raw, 0, 1) + log_f0_mean, ag::sigmoid(ag::slice_cols(raw, 1, 1))};
}

Var PitchPredictor::embed(const Var& log_f0, const Var& vuv, double log_f0_mean) const {
  const Var parts[] = {log_f0 - log_f0_mean, vuv};
  return embedding_(ag::concat_cols(parts));
}

Var pitch_loss(const PitchOutputs& pred, std::span<const double> log_f0, std::span<const std::uint8_t> vuv) {
  const std::size_t n = pred.log_f0.rows();
  if (log_f0.size() != n || vuv.size() != n) throw AcousticError("pitch target length does not match frames");
  Var f0 = Var::constant(n, 1, std::vector<double>(log_f0.begin(), log_f0.end()));
  Var uv = Var::constant(n, 1, std::vector<double>(vuv.begin(), vuv.end()));
  return ag::mean(ag::abs(pred.log_f0 - f0)) + ag::mean(ag::abs(pred.vuv - uv));
}

Var length_regulate(const Var& hidden, std::span<const std::size_t> durations, bool* degenerate) {
  if (durations.size() != hidden.rows()) throw AcousticError("duration count does not match phones");
  std::size_t total = 0;
  for (auto d : durations) total += d;
  if (degenerate) *degenerate = total == 0;
  if (total == 0) return Var::constant(0, hidden.cols(), std::vector<double>{});
  return ag::repeat_rows(hidden, durations);
}

Var length_regulate(const Var& hidden, std::span<const long long> durations, bool* degenerate) {
  std::vector<std::size_t> d;
  d.reserve(durations.size());
  for (auto v : durations) {
    if (v < 0) throw AcousticError("negative duration");
    d.push_back(static_cast<std::size_t>(v));
  }
  return length_regulate(hidden, d, degenerate);
}

// ---------------------------------------------------------------------------

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw AcousticError("diffusion schedule needs at least one step");
  DiffusionSchedule s;
  double bar = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw AcousticError("diffusion betas must lie in (0, 1)");
    s.alphas_.push_back(1.0 - b);
    bar *= 1.0 - b;
    s.alpha_bars_.push_back(bar);
  }
  s.betas_ = std::move(betas);
  return s;
}

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw AcousticError("diffusion schedule needs at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * f;
  }
  return from_betas(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::cosine(std::size_t steps) {
  if (steps == 0) throw AcousticError("diffusion schedule needs at least one step");
  constexpr double s = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / static_cast<double>(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(steps);
  for (std::size_t i = 1; i <= steps; ++i)
    betas[i - 1] = std::min(1.0 - f(static_cast<double>(i)) / f(static_cast<double>(i - 1)), 0.999);
  return from_betas(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::from_config(const AcousticConfig& config) {
  return make_schedule(config.schedule, static_cast<std::size_t>(config.diffusion_steps), config.beta_start,
                       config.beta_end);
}

std::size_t DiffusionSchedule::check(std::size_t t) const {
  if (t < 1 || t > betas_.size())
    throw AcousticError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(betas_.size()));
  return t;
}

double DiffusionSchedule::posterior_variance(std::size_t t) const {
  check(t);
  if (t == 1) return 0.0;
  return (1.0 - alpha_bars_[t - 2]) / (1.0 - alpha_bars_[t - 1]) * betas_[t - 1];
}

nlohmann::json DiffusionSchedule::to_json() const { return {{"steps", steps()}, {"betas", betas_}}; }

std::vector<std::string> shipped_schedules() { return {"linear", "cosine"}; }

DiffusionSchedule make_schedule(const std::string& name, std::size_t steps, double beta_start, double beta_end) {
  if (name == "linear") return DiffusionSchedule::linear(steps, beta_start, beta_end);
  if (name == "cosine") return DiffusionSchedule::cosine(steps);
  throw AcousticError("unknown diffusion schedule '" + name + "'");
}

std::vector<double> q_sample(std::span<const double> x0, std::size_t t, std::span<const double> noise,
                             const DiffusionSchedule& sched) {
  if (x0.size() != noise.size()) throw AcousticError("q_sample: shape mismatch");
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

std::vector<double> predict_x0(std::span<const double> x_t, std::size_t t, std::span<const double> eps,
                               const DiffusionSchedule& sched) {
  if (x_t.size() != eps.size()) throw AcousticError("predict_x0: shape mismatch");
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps[i]) / a;
  return out;
}

std::vector<double> denoise_step(std::span<const double> x_t, std::size_t t, std::span<const double> eps_hat,
                                 const DiffusionSchedule& sched, Rng& rng) {
  if (x_t.size() != eps_hat.size()) throw AcousticError("denoise_step: shape mismatch");
  const double beta = sched.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sigma = std::sqrt(sched.posterior_variance(t));
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]);
    if (t > 1) out[i] += sigma * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------

DiffusionDecoder::DiffusionDecoder(nn::ParameterStore& store, const std::string& name, const AcousticConfig& config,
                                   std::size_t n_mels, std::size_t cond_dim, Rng& rng)
    : channels_(static_cast<std::size_t>(config.decoder_channels)), n_mels_(n_mels) {
  const std::size_t c = channels_;
  input_ = nn::Linear(store, name + ".input", n_mels, c, rng);
  step1_ = nn::Linear(store, name + ".step1", c, 4 * c, rng);
  step2_ = nn::Linear(store, name + ".step2", 4 * c, c, rng);
  for (int i = 0; i < config.decoder_layers; ++i) {
    const std::string p = name + ".layer" + std::to_string(i);
    const std::size_t dilation = std::size_t{1} << (static_cast<std::size_t>(i) % static_cast<std::size_t>(config.dilation_cycle));
    Layer l;
    l.diffusion_proj = nn::Linear(store, p + ".diffusion_proj", c, c, rng);
    l.dilated = nn::Conv1d(store, p + ".dilated", c, 2 * c, 3, dilation, rng);
    l.cond_proj = nn::Linear(store, p + ".cond_proj", cond_dim, 2 * c, rng);
    l.output = nn::Linear(store, p + ".output", c, 2 * c, rng);
    layers_.push_back(std::move(l));
  }
  skip_ = nn::Linear(store, name + ".skip", c, c, rng);
  out_ = nn::Linear(store, name + ".out", c, n_mels, rng, nn::Init::kZeros);
}

Var DiffusionDecoder::predict_eps(const Var& x_t, std::size_t t, const Var& cond) const {
  if (x_t.cols() != n_mels_ || cond.rows() != x_t.rows()) throw AcousticError("decoder input shapes do not match");
  const std::size_t c = channels_;
  Var x = ag::relu(input_(x_t));
  Var step = Var::constant(1, c, nn::sinusoidal_embedding(static_cast<double>(t), c));
  step = step2_(ag::swish(step1_(step)));
  Var skip_sum;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (const auto& l : layers_) {
    Var y = l.dilated(ag::add_row(x, l.diffusion_proj(step))) + l.cond_proj(cond);
    Var gate = ag::tanh(ag::slice_cols(y, 0, c)) * ag::sigmoid(ag::slice_cols(y, c, c));
    Var o = l.output(gate);
    x = (x + ag::slice_cols(o, 0, c)) * inv_sqrt2;
    Var s = ag::slice_cols(o, c, c);
    skip_sum = skip_sum.defined() ? skip_sum + s : s;
  }
  if (!skip_sum.defined()) skip_sum = x;
  Var s = skip_sum * (1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(layers_.size(), 1))));
  return out_(ag::relu(skip_(s)));
}

EpsNet DiffusionDecoder::as_eps_net() const {
  return [this](const Var& x_t, std::size_t t, const Var& cond) { return predict_eps(x_t, t, cond); };
}

std::vector<double> generate(const EpsNet& eps_net, const Var& cond, std::size_t n_mels, const DiffusionSchedule& sched,
                             Rng& rng) {
  if (cond.rows() == 0) throw AcousticError("generate: conditioning has no frames");
  ag::NoGradGuard guard;
  const std::size_t n = cond.rows();
  std::vector<double> x = rng.normals(n * n_mels);
  for (std::size_t t = sched.steps(); t >= 1; --t) {
    Var eps = eps_net(Var::constant(n, n_mels, x), t, cond);
    x = denoise_step(x, t, eps.value(), sched, rng);
  }
  return x;
}

Var diffusion_loss(const EpsNet& eps_net, const Var& x0, const Var& cond, std::size_t t, std::span<const double> noise,
                   const DiffusionSchedule& sched) {
  if (noise.size() != x0.size()) throw AcousticError("diffusion_loss: noise shape mismatch");
  Var x_t = Var::constant(x0.rows(), x0.cols(), q_sample(x0.value(), t, noise, sched));
  Var eps_hat = eps_net(x_t, t, cond);
  return ag::mean(ag::abs(eps_hat - Var::constant(x0.rows(), x0.cols(), std::vector<double>(noise.begin(), noise.end()))));
}

Var diffusion_loss(const EpsNet& eps_net, const Var& x0, const Var& cond, const DiffusionSchedule& sched, Rng& rng) {
  const std::size_t t = 1 + static_cast<std::size_t>(rng.below(sched.steps()));
  const auto noise = rng.normals(x0.size());
  return diffusion_loss(eps_net, x0, cond, t, noise, sched);
}

}  // namespace promptts
