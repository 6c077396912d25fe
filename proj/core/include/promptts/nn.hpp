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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptts/archive.hpp"
#include "promptts/autograd.hpp"
#include "promptts/random.hpp"

namespace promptts::nn {

using ag::Var;

enum class Init { kZeros, kOnes, kXavier, kNormal002, kNormal001, kNormal05 };

struct NamedParameter {
  std::string name;
  Var var;
};

/// Owns every trainable tensor of a model under hierarchical dotted names.
/// Iteration order is registration order, which keeps optimizer updates and
/// checkpoint contents deterministic.
class ParameterStore {
 public:
  Var add(const std::string& name, std::size_t rows, std::size_t cols, Init init, Rng& rng);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedParameter>& all() const { return params_; }
  std::vector<NamedParameter> with_prefix(const std::string& prefix) const;

  /// Toggles requires_grad on every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();
  std::size_t scalar_count() const;

  void save(Archive& archive, const std::string& prefix = "param/") const;
  /// Loads values in place; every registered parameter must be present.
  void load(const Archive& archive, const std::string& prefix = "param/");

 private:
  std::vector<NamedParameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// y = x W + b
struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [1 x out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::kXavier, bool with_bias = true);
  Var operator()(const Var& x) const;
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim, Rng& rng, double eps = 1e-5);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta, eps); }
};

/// "Same"-padded 1-D convolution over the time axis: [T x Cin] -> [T x Cout].
struct Conv1d {
  Var weight;  // [kernel*Cin x Cout]
  Var bias;    // [1 x Cout]
  std::size_t kernel = 1;
  std::size_t dilation = 1;

  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t dilation, Rng& rng, Init init = Init::kXavier);
  Var operator()(const Var& x) const;
};

/// Strided 2-D convolution over a channels-last [(H*W) x Cin] map.
struct Conv2d {
  Var weight;  // [kernel*kernel*Cin x Cout]
  Var bias;    // [1 x Cout]
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t pad, Rng& rng);
  /// Returns the output map and updates height/width in place.
  Var operator()(const Var& x, std::size_t& height, std::size_t& width) const;
  std::size_t out_extent(std::size_t extent) const { return (extent + 2 * pad - kernel) / stride + 1; }
};

/// Single-layer GRU (PyTorch gate convention) returning the final state.
struct Gru {
  Var w_input;   // [in x 3H], gate order r, z, n
  Var w_hidden;  // [H x 3H]
  Var b_input;   // [1 x 3H]
  Var b_hidden;  // [1 x 3H]
  std::size_t hidden = 0;

  Gru() = default;
  Gru(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  /// x [T x in] -> h_T [1 x H], starting from h_0 = 0.
  Var operator()(const Var& x) const;
};

/// Multi-head scaled dot-product self-attention over rows of x.
struct MultiHeadSelfAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                         Rng& rng);
  Var operator()(const Var& x) const;
};

/// Scaled dot-product attention of q [Tq x d] over k, v [Tk x d] split into heads.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads);

/// Sinusoidal position table [length x dim].
std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim);
/// Sinusoidal embedding of a scalar position (diffusion step) as [1 x dim].
std::vector<double> sinusoidal_embedding(double position, std::size_t dim);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

/// AdamW with decoupled weight decay over the trainable parameters of a store.
class AdamW {
 public:
  AdamW(ParameterStore& store, AdamWOptions options);

  /// Applies one update with the given learning rate; returns the global
  /// gradient norm before clipping.
  double step(double learning_rate);
  std::size_t steps() const { return steps_; }

  void save(Archive& archive) const;
  void load(const Archive& archive);

 private:
  ParameterStore& store_;
  AdamWOptions options_;
  std::size_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

double global_grad_norm(const ParameterStore& store);

}  // namespace promptts::nn
