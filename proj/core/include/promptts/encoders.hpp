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

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptts/backbone.hpp"
#include "promptts/config.hpp"
#include "promptts/nn.hpp"

namespace promptts {

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- Gaussian mixtures ----

/// Diagonal Gaussian mixture over R^dim.
struct GMMParams {
  std::size_t components = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // [K]
  std::vector<double> means;    // [K x dim]
  std::vector<double> scales;   // [K x dim], > 0

  /// Throws EncoderError when shapes or the simplex/positivity invariants fail.
  void validate(double tolerance = 1e-6) const;
};

/// Differentiable mixture parameters for N rows (one mixture per row).
struct GmmVars {
  ag::Var logits;      // [N x K]
  ag::Var means;       // [N x K*D]
  ag::Var log_scales;  // [N x K*D]
  std::size_t components = 0;
  std::size_t dim = 0;

  GMMParams row(std::size_t r) const;
};

/// Splits raw [N x K(1+2D)] head outputs into mixture parameters. Log-scales
/// are floored at log(scale_floor).
GmmVars split_mixture(const ag::Var& raw, std::size_t components, std::size_t dim, double scale_floor);

/// -log sum_k w_k N(target; mu_k, diag(sigma_k^2)) with log-sum-exp
/// stabilization. Throws EncoderError on a non-finite result.
double mdn_nll(const GMMParams& gmm, std::span<const double> target);
/// Mean over rows of the differentiable NLL; targets [N x D].
ag::Var mdn_nll(const GmmVars& gmm, const ag::Var& targets);

enum class MdnMode { kSample, kArgmax };

/// Ancestral draw without re-normalization: component by weight, then
/// mu + temperature * sigma * z. Argmax mode returns the heaviest mean.
std::vector<double> mdn_sample_raw(const GMMParams& gmm, Rng& rng, double temperature = 1.0,
                                   MdnMode mode = MdnMode::kSample);
/// The raw draw scaled to unit norm.
std::vector<double> mdn_sample(const GMMParams& gmm, Rng& rng, double temperature = 1.0,
                               MdnMode mode = MdnMode::kSample);

/// 1 - cos(pred, target); throws on a zero-norm pred.
double cosine_loss(std::span<const double> pred, std::span<const double> target);
/// Differentiable variant, mean over rows.
ag::Var cosine_loss(const ag::Var& pred, const ag::Var& target);

// ---- reference encoder ----

struct GstResult {
  ag::Var embedding;            // [1 x out_dim] before normalization
  std::vector<double> weights;  // [heads x num_tokens]
};

/// Learned token bank with per-head scaled dot-product attention.
class StyleTokenBank {
 public:
  StyleTokenBank() = default;
  StyleTokenBank(nn::ParameterStore& store, const std::string& name, std::size_t query_dim,
                 const ReferenceEncoderConfig& config, Rng& rng);

  GstResult attend(const ag::Var& query) const;

  const ag::Var& tokens() const { return tokens_; }
  std::size_t heads() const { return heads_; }
  const nn::Linear& value_projection() const { return value_; }
  const nn::Linear& query_projection() const { return query_; }
  const nn::Linear& key_projection() const { return key_; }
  const nn::Linear& output_projection() const { return output_; }

 private:
  ag::Var tokens_;  // [num_tokens x token_dim]
  nn::Linear query_, key_, value_, output_;
  std::size_t heads_ = 1;
};

/// Per-head weights softmax(q_h k_h^T / sqrt(d_h)) and the output projection
/// of the concatenated weighted sums.
GstResult gst_attention(const ag::Var& query, const StyleTokenBank& bank);

/// Six strided convolutions (each followed by a channel LayerNorm and ReLU),
/// a GRU, and token attention, giving a unit-norm style embedding.
class ReferenceEncoder {
 public:
  ReferenceEncoder(nn::ParameterStore& store, const std::string& name, const ReferenceEncoderConfig& config,
                   std::size_t n_mels, Rng& rng);

  /// mel [T x n_mels] -> [1 x embed_dim], unit L2 norm.
  ag::Var forward(const ag::Var& mel) const;
  /// Also returns the token attention weights.
  GstResult forward_with_weights(const ag::Var& mel) const;
  std::vector<double> encode(std::span<const double> mel, std::size_t frames) const;

  /// Smallest accepted frame count.
  std::size_t min_frames() const { return 1; }
  std::size_t embed_dim() const { return embed_dim_; }
  const StyleTokenBank& bank() const { return bank_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::LayerNorm> norms_;
  nn::Gru gru_;
  StyleTokenBank bank_;
  std::size_t n_mels_;
  std::size_t embed_dim_;
};

// ---- prompt encoder head ----

/// Three ReLU-interleaved linear layers over the backbone output, then either
/// an MDN projection (K(1+2D) outputs) or a direct D-dimensional projection.
class PromptHead {
 public:
  PromptHead(nn::ParameterStore& store, const std::string& name, std::size_t text_dim, std::size_t embed_dim,
             const PromptEncoderConfig& config, bool use_mdn, Rng& rng);

  ag::Var hidden(const ag::Var& text_embedding) const;
  /// MDN path.
  GmmVars mixture(const ag::Var& text_embedding) const;
  /// Cosine path: unnormalized prediction [1 x D].
  ag::Var direct(const ag::Var& text_embedding) const;

  bool use_mdn() const { return use_mdn_; }
  std::size_t components() const { return components_; }
  std::size_t embed_dim() const { return embed_dim_; }
  const nn::Linear& projection() const { return projection_; }

 private:
  nn::Linear l1_, l2_, l3_, projection_;
  bool use_mdn_;
  std::size_t components_;
  std::size_t embed_dim_;
  double scale_floor_;
};

}  // namespace promptts
