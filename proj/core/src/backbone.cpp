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

#include "promptts/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

namespace promptts {
namespace {

bool is_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

TokenizedText finish(std::vector<std::size_t> body, std::size_t cls, std::size_t sep, std::size_t max_tokens) {
  TokenizedText t;
  const std::size_t room = max_tokens >= 2 ? max_tokens - 2 : 0;
  if (body.size() > room) {
    body.resize(room);
    t.truncated = true;
  }
  t.ids.reserve(body.size() + 2);
  t.ids.push_back(cls);
  t.ids.insert(t.ids.end(), body.begin(), body.end());
  t.ids.push_back(sep);
  return t;
}

void warn_truncated(const std::string& text, std::size_t max_tokens) {
  spdlog::warn("prompt truncated to {} tokens: \"{}\"", max_tokens, text.substr(0, 60));
}

}  // namespace

HashTokenizer::HashTokenizer(std::size_t vocab_size) : vocab_(vocab_size) {
  if (vocab_ < 3) throw BackboneError("hash tokenizer needs a vocabulary of at least 3");
}

TokenizedText HashTokenizer::encode(const std::string& text, std::size_t max_tokens) const {
  std::vector<std::size_t> body;
  for (const auto& w : split_words(text)) body.push_back(2 + static_cast<std::size_t>(fnv1a64(w) % (vocab_ - 2)));
  return finish(std::move(body), 0, 1, max_tokens);
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
  auto need = [&](const std::string& tok) {
    auto it = index_.find(tok);
    if (it == index_.end()) throw BackboneError("WordPiece vocabulary lacks " + tok);
    return it->second;
  };
  unk_ = need("[UNK]");
  cls_ = need("[CLS]");
  sep_ = need("[SEP]");
}

WordPieceTokenizer WordPieceTokenizer::from_file(const std::filesystem::path& vocab_txt) {
  std::ifstream in(vocab_txt);
  if (!in) throw BackboneError("cannot open vocabulary " + vocab_txt.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab));
}

std::vector<std::string> WordPieceTokenizer::basic_split(const std::string& text) { return split_words(text); }

std::size_t WordPieceTokenizer::id_of(const std::string& piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? unk_ : it->second;
}

std::vector<std::size_t> WordPieceTokenizer::wordpiece(const std::string& word) const {
  if (word.size() > 100) return {unk_};
  std::vector<std::size_t> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<std::size_t> found;
    while (start < end) {
      std::string sub = word.substr(start, end - start);
      if (start > 0) sub = "##" + sub;
      auto it = index_.find(sub);
      if (it != index_.end()) {
        found = it->second;
        break;
      }
      --end;
    }
    if (!found) return {unk_};
    pieces.push_back(*found);
    start = end;
  }
  return pieces;
}

TokenizedText WordPieceTokenizer::encode(const std::string& text, std::size_t max_tokens) const {
  std::vector<std::size_t> body;
  for (const auto& w : basic_split(text)) {
    auto p = wordpiece(w);
    body.insert(body.end(), p.begin(), p.end());
  }
  return finish(std::move(body), cls_, sep_, max_tokens);
}

// ---------------------------------------------------------------------------

TransformerEncoder::TransformerEncoder(nn::ParameterStore& store, const std::string& prefix, TransformerShape shape,
                                       Rng& rng, nn::Init linear_init)
    : prefix_(prefix), shape_(shape) {
  if (shape.hidden % shape.heads != 0) throw BackboneError("transformer hidden size must divide into heads");
  const std::string e = prefix + "embeddings.";
  word_ = store.add(e + "word_embeddings", shape.vocab, shape.hidden, nn::Init::kNormal002, rng);
  position_ = store.add(e + "position_embeddings", shape.max_positions, shape.hidden, nn::Init::kNormal002, rng);
  token_type_ = store.add(e + "token_type_embeddings", shape.type_vocab, shape.hidden, nn::Init::kNormal002, rng);
  embed_norm_ = nn::LayerNorm(store, e + "LayerNorm", shape.hidden, rng, shape.layer_norm_eps);
  const auto init = linear_init;
  for (std::size_t i = 0; i < shape.layers; ++i) {
    const std::string p = layer_prefix(i);
    Layer l;
    l.query = nn::Linear(store, p + "attention.self.query", shape.hidden, shape.hidden, rng, init);
    l.key = nn::Linear(store, p + "attention.self.key", shape.hidden, shape.hidden, rng, init);
    l.value = nn::Linear(store, p + "attention.self.value", shape.hidden, shape.hidden, rng, init);
    l.attn_out = nn::Linear(store, p + "attention.output.dense", shape.hidden, shape.hidden, rng, init);
    l.attn_norm = nn::LayerNorm(store, p + "attention.output.LayerNorm", shape.hidden, rng, shape.layer_norm_eps);
    l.intermediate = nn::Linear(store, p + "intermediate.dense", shape.hidden, shape.intermediate, rng, init);
    l.output = nn::Linear(store, p + "output.dense", shape.intermediate, shape.hidden, rng, init);
    l.out_norm = nn::LayerNorm(store, p + "output.LayerNorm", shape.hidden, rng, shape.layer_norm_eps);
    layers_.push_back(std::move(l));
  }
}

std::string TransformerEncoder::layer_prefix(std::size_t layer) const {
  return prefix_ + "encoder.layer." + std::to_string(layer) + ".";
}

ag::Var TransformerEncoder::forward(const std::vector<std::size_t>& ids) const {
  if (ids.empty()) throw BackboneError("transformer input is empty");
  if (ids.size() > shape_.max_positions) throw BackboneError("transformer input exceeds max positions");
  for (auto id : ids)
    if (id >= shape_.vocab) throw BackboneError("token id out of vocabulary range");
  std::vector<std::size_t> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  const std::vector<std::size_t> types(ids.size(), 0);
  ag::Var x = ag::gather_rows(word_, ids) + ag::gather_rows(position_, positions) + ag::gather_rows(token_type_, types);
  x = embed_norm_(x);
  for (const auto& l : layers_) {
    ag::Var a = nn::multi_head_attention(l.query(x), l.key(x), l.value(x), shape_.heads);
    x = l.attn_norm(x + l.attn_out(a));
    ag::Var h = l.output(ag::gelu(l.intermediate(x)));
    x = l.out_norm(x + h);
  }
  return x;
}

// ---------------------------------------------------------------------------

namespace {

TransformerShape mock_shape(const PromptEncoderConfig& c) {
  TransformerShape s;
  s.vocab = static_cast<std::size_t>(c.mock_vocab);
  s.hidden = static_cast<std::size_t>(c.mock_hidden);
  s.layers = static_cast<std::size_t>(c.mock_layers);
  s.heads = static_cast<std::size_t>(c.mock_heads);
  s.intermediate = static_cast<std::size_t>(c.mock_intermediate);
  s.max_positions = static_cast<std::size_t>(c.max_tokens);
  return s;
}

void freeze_all_but_last(nn::ParameterStore& store, const TransformerEncoder& enc, const std::string& prefix,
                         int trainable_blocks) {
  store.set_trainable(prefix, false);
  const auto layers = enc.shape().layers;
  const auto keep = std::min<std::size_t>(layers, static_cast<std::size_t>(std::max(0, trainable_blocks)));
  for (std::size_t i = layers - keep; i < layers; ++i) store.set_trainable(enc.layer_prefix(i), true);
}

}  // namespace

MockBackbone::MockBackbone(nn::ParameterStore& store, const PromptEncoderConfig& config)
    : tokenizer_(static_cast<std::size_t>(config.mock_vocab)),
      max_tokens_(static_cast<std::size_t>(config.max_tokens)),
      encoder_([&]() -> TransformerEncoder {
        Rng rng(derive_seed(0, "mock-backbone"));
        return TransformerEncoder(store, "backbone.", mock_shape(config), rng, nn::Init::kXavier);
      }()) {}

std::string MockBackbone::id() const {
  const auto& s = encoder_.shape();
  return "mock-hash-transformer/h" + std::to_string(s.hidden) + "-l" + std::to_string(s.layers) + "-v" +
         std::to_string(s.vocab);
}

TokenizedText MockBackbone::tokenize(const std::string& text) const {
  return tokenizer_.encode(text, max_tokens_);
}

ag::Var MockBackbone::embed(const std::string& text) const {
  if (text.empty()) throw BackboneError("cannot embed empty text");
  auto tok = tokenize(text);
  if (tok.truncated) warn_truncated(text, max_tokens_);
  return ag::slice_rows(encoder_.forward(tok.ids), 0, 1);
}

void MockBackbone::apply_trainability(nn::ParameterStore& store, int trainable_blocks) const {
  freeze_all_but_last(store, encoder_, prefix(), trainable_blocks);
}

// ---------------------------------------------------------------------------

TransformerShape BertBackbone::read_shape(const Archive& weights) {
  const auto& m = weights.meta();
  if (m.value("kind", "") != "bert-weights") throw BackboneError("archive is not an exported BERT weight file");
  TransformerShape s;
  try {
    const auto& c = m.at("config");
    s.vocab = c.at("vocab_size").get<std::size_t>();
    s.hidden = c.at("hidden_size").get<std::size_t>();
    s.layers = c.at("num_hidden_layers").get<std::size_t>();
    s.heads = c.at("num_attention_heads").get<std::size_t>();
    s.intermediate = c.at("intermediate_size").get<std::size_t>();
    s.max_positions = c.at("max_position_embeddings").get<std::size_t>();
    s.type_vocab = c.at("type_vocab_size").get<std::size_t>();
    s.layer_norm_eps = c.at("layer_norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw BackboneError(std::string("BERT weight metadata incomplete: ") + e.what());
  }
  return s;
}

BertBackbone::BertBackbone(nn::ParameterStore& store, const PromptEncoderConfig& config)
    : max_tokens_(static_cast<std::size_t>(config.max_tokens)) {
  if (config.backbone_path.empty() || config.vocab_path.empty())
    throw BackboneError("bert backbone needs prompt_encoder.backbone_path and prompt_encoder.vocab_path");
  tokenizer_ = std::make_unique<WordPieceTokenizer>(WordPieceTokenizer::from_file(config.vocab_path));
  const Archive weights = Archive::load(config.backbone_path);
  const TransformerShape shape = read_shape(weights);
  if (shape.vocab != tokenizer_->vocab_size()) throw BackboneError("BERT vocabulary size does not match vocab.txt");
  max_tokens_ = std::min(max_tokens_, shape.max_positions);
  Rng rng(0);
  encoder_ = std::make_unique<TransformerEncoder>(store, "backbone.", shape, rng);
  for (const auto& p : store.with_prefix("backbone.")) {
    const std::string key = p.name.substr(std::string("backbone.").size());
    if (!weights.has(key)) throw BackboneError("BERT weight file lacks tensor " + key);
    const auto& t = weights.get(key);
    if (t.rows != p.var.rows() || t.cols != p.var.cols()) throw BackboneError("BERT tensor " + key + " has wrong shape");
    auto v = p.var;
    v.mutable_value() = t.data;
  }
  id_ = "bert/" + weights.meta().value("model_name", std::string("unknown"));
}

TokenizedText BertBackbone::tokenize(const std::string& text) const { return tokenizer_->encode(text, max_tokens_); }

ag::Var BertBackbone::embed(const std::string& text) const {
  if (text.empty()) throw BackboneError("cannot embed empty text");
  auto tok = tokenize(text);
  if (tok.truncated) warn_truncated(text, max_tokens_);
  return ag::slice_rows(encoder_->forward(tok.ids), 0, 1);
}

void BertBackbone::apply_trainability(nn::ParameterStore& store, int trainable_blocks) const {
  freeze_all_but_last(store, *encoder_, prefix(), trainable_blocks);
}

std::unique_ptr<TextBackbone> make_backbone(nn::ParameterStore& store, const PromptEncoderConfig& config) {
  if (config.backbone == "mock") return std::make_unique<MockBackbone>(store, config);
  if (config.backbone == "bert") return std::make_unique<BertBackbone>(store, config);
  throw BackboneError("unknown backbone '" + config.backbone + "'");
}

}  // namespace promptts
