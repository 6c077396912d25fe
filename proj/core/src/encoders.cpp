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

#include "promptts/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace promptts {

using ag::Var;

void GMMParams::validate(double tolerance) const {
  if (components == 0 || dim == 0) throw EncoderError("mixture has no components or zero dimension");
  if (weights.size() != components || means.size() != components * dim || scales.size() != components * dim)
    throw EncoderError("mixture parameter shapes are inconsistent");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw EncoderError("mixture weight is negative or NaN");
    total += w;
  }
  if (std::abs(total - 1.0) > tolerance) throw EncoderError("mixture weights do not sum to one");
  for (double s : scales)
    if (!(s > 0.0)) throw EncoderError("mixture scale is not positive");
}

GMMParams GmmVars::row(std::size_t r) const {
  GMMParams g;
  g.components = components;
  g.dim = dim;
  const std::size_t kd = components * dim;
  const auto& lv = logits.value();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < components; ++k) mx = std::max(mx, lv[r * components + k]);
  double z = 0.0;
  g.weights.resize(components);
  for (std::size_t k = 0; k < components; ++k) {
    g.weights[k] = std::exp(lv[r * components + k] - mx);
    z += g.weights[k];
  }
  for (auto& w : g.weights) w /= z;
  g.means.assign(means.value().begin() + static_cast<std::ptrdiff_t>(r * kd),
                 means.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * kd));
  g.scales.resize(kd);
  for (std::size_t i = 0; i < kd; ++i) g.scales[i] = std::exp(log_scales.value()[r * kd + i]);
  return g;
}

GmmVars split_mixture(const Var& raw, std::size_t components, std::size_t dim, double scale_floor) {
  const std::size_t kd = components * dim;
  if (raw.cols() != components + 2 * kd) throw EncoderError("mixture head output has the wrong width");
  GmmVars g;
  g.components = components;
  g.dim = dim;
  g.logits = ag::slice_cols(raw, 0, components);
  g.means = ag::slice_cols(raw, components, kd);
  g.log_scales = ag::clamp_min(ag::slice_cols(raw, components + kd, kd), std::log(scale_floor));
  return g;
}

double mdn_nll(const GMMParams& gmm, std::span<const double> target) {
  if (target.size() != gmm.dim) throw EncoderError("mdn_nll: target dimension mismatch");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  std::vector<double> terms(gmm.components);
  for (std::size_t k = 0; k < gmm.components; ++k) {
    double acc = std::log(gmm.weights[k]);
    for (std::size_t d = 0; d < gmm.dim; ++d) {
      const double s = gmm.scales[k * gmm.dim + d];
      const double z = (target[d] - gmm.means[k * gmm.dim + d]) / s;
      acc -= std::log(s) + half_log_2pi + 0.5 * z * z;
    }
    terms[k] = acc;
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  const double nll = -(mx + std::log(s));
  if (!std::isfinite(nll)) throw EncoderError("mdn_nll is not finite (scale underflow or invalid weights)");
  return nll;
}

Var mdn_nll(const GmmVars& gmm, const Var& targets) {
  if (targets.cols() != gmm.dim || targets.rows() != gmm.logits.rows())
    throw EncoderError("mdn_nll: target shape mismatch");
  Var nll = ag::mean(ag::gmm_nll_rows(gmm.logits, gmm.means, gmm.log_scales, targets));
  if (!std::isfinite(nll.item())) throw EncoderError("mdn_nll is not finite (scale underflow or invalid weights)");
  return nll;
}

std::vector<double> mdn_sample_raw(const GMMParams& gmm, Rng& rng, double temperature, MdnMode mode) {
  if (!(temperature >= 0.0)) throw EncoderError("sampling temperature must be non-negative");
  std::size_t k = 0;
  if (mode == MdnMode::kArgmax) {
    k = static_cast<std::size_t>(std::max_element(gmm.weights.begin(), gmm.weights.end()) - gmm.weights.begin());
  } else {
    k = rng.categorical(gmm.weights);
  }
  std::vector<double> out(gmm.dim);
  for (std::size_t d = 0; d < gmm.dim; ++d) {
    out[d] = gmm.means[k * gmm.dim + d];
    if (mode == MdnMode::kSample) out[d] += temperature * gmm.scales[k * gmm.dim + d] * rng.normal();
  }
  return out;
}

std::vector<double> mdn_sample(const GMMParams& gmm, Rng& rng, double temperature, MdnMode mode) {
  auto v = mdn_sample_raw(gmm, rng, temperature, mode);
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw EncoderError("sampled embedding has zero norm");
  for (auto& x : v) x /= n;
  return v;
}

double cosine_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw EncoderError("cosine_loss: dimension mismatch");
  double dot = 0.0, np = 0.0, nt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    dot += pred[i] * target[i];
    np += pred[i] * pred[i];
    nt += target[i] * target[i];
  }
  if (np == 0.0) throw EncoderError("cosine_loss: prediction has zero norm");
  if (nt == 0.0) throw EncoderError("cosine_loss: target has zero norm");
  return 1.0 - dot / std::sqrt(np * nt);
}

Var cosine_loss(const Var& pred, const Var& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw EncoderError("cosine_loss: shape mismatch");
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    double np = 0.0;
    for (std::size_t c = 0; c < pred.cols(); ++c) np += pred.at(r, c) * pred.at(r, c);
    if (np == 0.0) throw EncoderError("cosine_loss: prediction has zero norm");
  }
  Var cos = ag::sum_cols(ag::l2_normalize_rows(pred) * ag::l2_normalize_rows(target));
  return -ag::mean(cos) + 1.0;
}

// ---------------------------------------------------------------------------

StyleTokenBank::StyleTokenBank(nn::ParameterStore& store, const std::string& name, std::size_t query_dim,
                               const ReferenceEncoderConfig& config, Rng& rng)
    : heads_(static_cast<std::size_t>(config.attention_heads)) {
  const auto tokens = static_cast<std::size_t>(config.num_tokens);
  const auto dim = static_cast<std::size_t>(config.token_dim);
  if (dim % heads_ != 0) throw EncoderError("token_dim must be divisible by attention_heads");
  tokens_ = store.add(name + ".tokens", tokens, dim, nn::Init::kNormal05, rng);
  query_ = nn::Linear(store, name + ".query", query_dim, dim, rng);
  key_ = nn::Linear(store, name + ".key", dim, dim, rng);
  value_ = nn::Linear(store, name + ".value", dim, dim, rng);
  output_ = nn::Linear(store, name + ".output", dim, static_cast<std::size_t>(config.embed_dim), rng);
}

GstResult StyleTokenBank::attend(const Var& query) const { return gst_attention(query, *this); }

GstResult gst_attention(const Var& query, const StyleTokenBank& bank) {
  if (query.rows() != 1 || query.cols() != bank.query_projection().in_features())
    throw EncoderError("gst_attention: query has the wrong shape");
  const Var tokens = bank.tokens();
  const std::size_t heads = bank.heads();
  const std::size_t dim = tokens.cols();
  const std::size_t dh = dim / heads;
  const Var q = bank.query_projection()(query);
  const Var k = bank.key_projection()(tokens);
  const Var v = bank.value_projection()(tokens);
  std::vector<Var> outs;
  GstResult r;
  r.weights.reserve(heads * tokens.rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(q, h * dh, dh);
    Var kh = ag::slice_cols(k, h * dh, dh);
    Var vh = ag::slice_cols(v, h * dh, dh);
    Var w = ag::softmax_rows(ag::matmul(qh, ag::transpose(kh)) * scale);
    r.weights.insert(r.weights.end(), w.value().begin(), w.value().end());
    outs.push_back(ag::matmul(w, vh));
  }
  r.embedding = bank.output_projection()(ag::concat_cols(outs));
  return r;
}


// ---------------------------------------------------------------------------

ReferenceEncoder::ReferenceEncoder(nn::ParameterStore& store, const std::string& name,
                                   const ReferenceEncoderConfig& config, std::size_t n_mels, Rng& rng)
    : name_(name),
      n_mels_(n_mels),
      embed_dim_(static_cast<std::size_t>(config.embed_dim)) {
  std::size_t in = 1;
  std::size_t width = n_mels;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    const auto out = static_cast<std::size_t>(config.conv_channels[i]);
    convs_.emplace_back(store, name + ".conv" + std::to_string(i), in, out, static_cast<std::size_t>(config.conv_kernel),
                        static_cast<std::size_t>(config.conv_stride), static_cast<std::size_t>(config.conv_padding), rng);
    norms_.emplace_back(store, name + ".conv" + std::to_string(i) + ".norm", out, rng);
    width = convs_.back().out_extent(width);
    in = out;
  }
  const auto units = static_cast<std::size_t>(config.gru_units);
  gru_ = nn::Gru(store, name + ".gru", width * in, units, rng);
  bank_ = StyleTokenBank(store, name + ".gst", units, config, rng);
}

GstResult ReferenceEncoder::forward_with_weights(const Var& mel) const {
  if (mel.cols() != n_mels_) throw EncoderError("reference encoder expects " + std::to_string(n_mels_) + " mel bins");
  if (mel.rows() < min_frames()) throw EncoderError("reference mel is shorter than the minimum of 1 frame");
  std::size_t h = mel.rows(), w = mel.cols();
  Var x = ag::reshape(mel, h * w, 1);
  for (std::size_t i = 0; i < convs_.size(); ++i) x = ag::relu(norms_[i](convs_[i](x, h, w)));
  x = ag::reshape(x, h, w * x.cols());
  GstResult r = bank_.attend(gru_(x));
  r.embedding = ag::l2_normalize_rows(r.embedding);
  return r;
}

Var ReferenceEncoder::forward(const Var& mel) const { return forward_with_weights(mel).embedding; }

std::vector<double> ReferenceEncoder::encode(std::span<const double> mel, std::size_t frames) const {
  ag::NoGradGuard guard;
  Var x = Var::constant(frames, n_mels_, std::vector<double>(mel.begin(), mel.end()));
  return forward(x).value();
}

// ---------------------------------------------------------------------------

PromptHead::PromptHead(nn::ParameterStore& store, const std::string& name, std::size_t text_dim,
                       std::size_t embed_dim, const PromptEncoderConfig& config, bool use_mdn, Rng& rng)
    : use_mdn_(use_mdn),
      components_(static_cast<std::size_t>(config.mixtures)),
      embed_dim_(embed_dim),
      scale_floor_(config.scale_floor) {
  const auto hidden = static_cast<std::size_t>(config.head_hidden);
  l1_ = nn::Linear(store, name + ".linear1", text_dim, hidden, rng);
  l2_ = nn::Linear(store, name + ".linear2", hidden, hidden, rng);
  l3_ = nn::Linear(store, name + ".linear3", hidden, hidden, rng);
  if (use_mdn) {
    projection_ = nn::Linear(store, name + ".mdn", hidden, components_ * (1 + 2 * embed_dim), rng, nn::Init::kNormal002);
  } else {
    projection_ = nn::Linear(store, name + ".direct", hidden, embed_dim, rng);
  }
}

Var PromptHead::hidden(const Var& text_embedding) const {
  return l3_(ag::relu(l2_(ag::relu(l1_(text_embedding)))));
}

GmmVars PromptHead::mixture(const Var& text_embedding) const {
  if (!use_mdn_) throw EncoderError("prompt head was built without the MDN projection");
  return split_mixture(projection_(hidden(text_embedding)), components_, embed_dim_, scale_floor_);
}

Var PromptHead::direct(const Var& text_embedding) const {
  if (use_mdn_) throw EncoderError("prompt head was built with the MDN projection");
  return projection_(hidden(text_embedding));
}

}  // namespace promptts
