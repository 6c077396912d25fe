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

#include "promptts/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace promptts::nn {

Var ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols, Init init, Rng& rng) {
  if (index_.count(name)) throw std::logic_error("ParameterStore: duplicate parameter '" + name + "'");
  std::vector<double> v(rows * cols, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(v.begin(), v.end(), 1.0);
      break;
    case Init::kXavier: {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * limit;
      break;
    }
    case Init::kNormal002:
      for (auto& x : v) x = 0.02 * rng.normal();
      break;
    case Init::kNormal001:
      for (auto& x : v) x = 0.01 * rng.normal();
      break;
    case Init::kNormal05:
      for (auto& x : v) x = 0.5 * rng.normal();
      break;
  }
  Var p = Var::leaf(rows, cols, std::move(v), true);
  index_[name] = params_.size();
  params_.push_back({name, p});
  return p;
}

Var ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
  return params_[it->second].var;
}

std::vector<NamedParameter> ParameterStore::with_prefix(const std::string& prefix) const {
  std::vector<NamedParameter> out;
  for (const auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(p);
  return out;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) p.var.set_requires_grad(trainable);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.size();
  return n;
}

void ParameterStore::save(Archive& archive, const std::string& prefix) const {
  for (const auto& p : params_) archive.put(prefix + p.name, p.var.rows(), p.var.cols(), p.var.value());
}

void ParameterStore::load(const Archive& archive, const std::string& prefix) {
  for (auto& p : params_) {
    const auto& t = archive.get(prefix + p.name);
    if (t.rows != p.var.rows() || t.cols != p.var.cols()) {
      throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape [" + std::to_string(t.rows) + "x" +
                               std::to_string(t.cols) + "], model expects [" + std::to_string(p.var.rows()) + "x" +
                               std::to_string(p.var.cols()) + "]");
    }
    p.var.mutable_value() = t.data;
  }
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               Init init, bool with_bias) {
  weight = store.add(name + ".weight", in, out, init, rng);
  if (with_bias) bias = store.add(name + ".bias", 1, out, Init::kZeros, rng);
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim, Rng& rng, double eps_)
    : eps(eps_) {
  gamma = store.add(name + ".gamma", 1, dim, Init::kOnes, rng);
  beta = store.add(name + ".beta", 1, dim, Init::kZeros, rng);
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel_, std::size_t dilation_, Rng& rng, Init init)
    : kernel(kernel_), dilation(dilation_) {
  if (kernel % 2 == 0) throw std::invalid_argument("Conv1d: kernel size must be odd");
  weight = store.add(name + ".weight", kernel * in, out, init, rng);
  bias = store.add(name + ".bias", 1, out, Init::kZeros, rng);
}

Var Conv1d::operator()(const Var& x) const {
  Var cols = kernel == 1 ? x : ag::im2col_1d(x, kernel, dilation);
  return ag::add_row(ag::matmul(cols, weight), bias);
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel_, std::size_t stride_, std::size_t pad_, Rng& rng)
    : kernel(kernel_), stride(stride_), pad(pad_) {
  weight = store.add(name + ".weight", kernel * kernel * in, out, Init::kXavier, rng);
  bias = store.add(name + ".bias", 1, out, Init::kZeros, rng);
}

Var Conv2d::operator()(const Var& x, std::size_t& height, std::size_t& width) const {
  Var cols = ag::im2col_2d(x, height, width, kernel, stride, pad);
  height = out_extent(height);
  width = out_extent(width);
  return ag::add_row(ag::matmul(cols, weight), bias);
}

Gru::Gru(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden_, Rng& rng)
    : hidden(hidden_) {
  w_input = store.add(name + ".w_input", in, 3 * hidden, Init::kXavier, rng);
  w_hidden = store.add(name + ".w_hidden", hidden, 3 * hidden, Init::kXavier, rng);
  b_input = store.add(name + ".b_input", 1, 3 * hidden, Init::kZeros, rng);
  b_hidden = store.add(name + ".b_hidden", 1, 3 * hidden, Init::kZeros, rng);
}

Var Gru::operator()(const Var& x) const {
  const std::size_t h = hidden;
  Var gates_x = ag::add_row(ag::matmul(x, w_input), b_input);  // [T x 3H]
  Var state = Var::constant(1, h, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    Var gx = ag::slice_rows(gates_x, t, 1);
    Var gh = ag::add_row(ag::matmul(state, w_hidden), b_hidden);
    Var r = ag::sigmoid(ag::slice_cols(gx, 0, h) + ag::slice_cols(gh, 0, h));
    Var z = ag::sigmoid(ag::slice_cols(gx, h, h) + ag::slice_cols(gh, h, h));
    Var n = ag::tanh(ag::slice_cols(gx, 2 * h, h) + r * ag::slice_cols(gh, 2 * h, h));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    state = n + z * (state - n);
  }
  return state;
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  const std::size_t dim = q.cols();
  if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
  const std::size_t dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = ag::slice_cols(q, hd * dh, dh);
    Var kh = ag::slice_cols(k, hd * dh, dh);
    Var vh = ag::slice_cols(v, hd * dh, dh);
    Var attn = ag::softmax_rows(ag::matmul(qh, ag::transpose(kh)) * scale);
    outs.push_back(ag::matmul(attn, vh));
  }
  return heads == 1 ? outs[0] : ag::concat_cols(outs);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                                               std::size_t heads_, Rng& rng)
    : heads(heads_) {
  query = Linear(store, name + ".query", dim, dim, rng);
  key = Linear(store, name + ".key", dim, dim, rng);
  value = Linear(store, name + ".value", dim, dim, rng);
  output = Linear(store, name + ".output", dim, dim, rng);
}

Var MultiHeadSelfAttention::operator()(const Var& x) const {
  return output(multi_head_attention(query(x), key(x), value(x), heads));
}

std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim) {
  std::vector<double> table(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    auto row = sinusoidal_embedding(static_cast<double>(pos), dim);
    std::copy(row.begin(), row.end(), table.begin() + static_cast<std::ptrdiff_t>(pos * dim));
  }
  return table;
}

std::vector<double> sinusoidal_embedding(double position, std::size_t dim) {
  // First half sines, second half cosines, geometric frequencies 1 .. 1/10000.
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
    out[i] = std::sin(position * freq);
    out[half + i] = std::cos(position * freq);
  }
  return out;
}

// ---------------------------------------------------------------------------

double global_grad_norm(const ParameterStore& store) {
  double s = 0.0;
  for (const auto& p : store.all()) {
    if (!p.var.requires_grad()) continue;
    for (double g : p.var.grad()) s += g * g;
  }
  return std::sqrt(s);
}

AdamW::AdamW(ParameterStore& store, AdamWOptions options) : store_(store), options_(options) {}

double AdamW::step(double learning_rate) {
  ++steps_;
  const double norm = global_grad_norm(store_);
  double clip_scale = 1.0;
  if (options_.grad_clip > 0.0 && norm > options_.grad_clip) clip_scale = options_.grad_clip / norm;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (const auto& p : store_.all()) {
    Var var = p.var;
    if (!var.requires_grad() || var.grad().empty()) continue;
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.empty()) {
      m.assign(var.size(), 0.0);
      v.assign(var.size(), 0.0);
    }
    const auto& g = var.grad();
    auto& w = var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip_scale;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= learning_rate * (mhat / (std::sqrt(vhat) + options_.eps) + options_.weight_decay * w[i]);
    }
  }
  return norm;
}

void AdamW::save(Archive& archive) const {
  archive.meta()["optimizer"] = {{"type", "adamw"}, {"steps", steps_}};
  for (const auto& [name, m] : m_) archive.put("adam_m/" + name, m);
  for (const auto& [name, v] : v_) archive.put("adam_v/" + name, v);
}

void AdamW::load(const Archive& archive) {
  m_.clear();
  v_.clear();
  steps_ = archive.meta().at("optimizer").at("steps").get<std::size_t>();
  for (const auto& [name, t] : archive.tensors()) {
    if (name.rfind("adam_m/", 0) == 0) m_[name.substr(7)] = t.data;
    if (name.rfind("adam_v/", 0) == 0) v_[name.substr(7)] = t.data;
  }
}

}  // namespace promptts::nn
