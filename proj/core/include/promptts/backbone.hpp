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

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptts/archive.hpp"
#include "promptts/config.hpp"
#include "promptts/nn.hpp"

namespace promptts {

class BackboneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenizedText {
  std::vector<std::size_t> ids;  // starts with the classification token
  bool truncated = false;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual TokenizedText encode(const std::string& text, std::size_t max_tokens) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

/// Lower-cases, splits words and punctuation, and hashes each piece into
/// [2, vocab). Ids 0 and 1 are the classification and separator tokens.
class HashTokenizer : public Tokenizer {
 public:
  explicit HashTokenizer(std::size_t vocab_size);
  TokenizedText encode(const std::string& text, std::size_t max_tokens) const override;
  std::size_t vocab_size() const override { return vocab_; }

 private:
  std::size_t vocab_;
};

/// Greedy longest-match-first WordPiece over an uncased BERT vocabulary.
class WordPieceTokenizer : public Tokenizer {
 public:
  explicit WordPieceTokenizer(std::vector<std::string> vocab);
  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_txt);

  TokenizedText encode(const std::string& text, std::size_t max_tokens) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }
  /// Basic pre-tokenization: lower-case, split on whitespace and punctuation.
  static std::vector<std::string> basic_split(const std::string& text);
  std::vector<std::size_t> wordpiece(const std::string& word) const;

 private:
  std::size_t id_of(const std::string& piece) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t unk_ = 0, cls_ = 0, sep_ = 0;
};

struct TransformerShape {
  std::size_t vocab = 0;
  std::size_t hidden = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t intermediate = 0;
  std::size_t max_positions = 512;
  std::size_t type_vocab = 2;
  double layer_norm_eps = 1e-12;
};

/// Post-LN BERT encoder. Parameters are registered under
/// `<prefix>embeddings.*` and `<prefix>encoder.layer.<i>.*`.
class TransformerEncoder {
 public:
  TransformerEncoder(nn::ParameterStore& store, const std::string& prefix, TransformerShape shape, Rng& rng,
                     nn::Init linear_init = nn::Init::kNormal002);

  /// ids -> hidden states [n x hidden].
  ag::Var forward(const std::vector<std::size_t>& ids) const;
  const TransformerShape& shape() const { return shape_; }
  std::string layer_prefix(std::size_t layer) const;

 private:
  struct Layer {
    nn::Linear query, key, value, attn_out, intermediate, output;
    nn::LayerNorm attn_norm, out_norm;
  };
  std::string prefix_;
  TransformerShape shape_;
  ag::Var word_, position_, token_type_;
  nn::LayerNorm embed_norm_;
  std::vector<Layer> layers_;
};

/// Text encoder producing the classification-position hidden state.
class TextBackbone {
 public:
  virtual ~TextBackbone() = default;
  virtual std::string id() const = 0;
  virtual std::size_t hidden_size() const = 0;
  virtual TokenizedText tokenize(const std::string& text) const = 0;
  /// [1 x hidden_size]; throws on empty text.
  virtual ag::Var embed(const std::string& text) const = 0;
  /// Leaves only the last `trainable_blocks` transformer blocks trainable.
  virtual void apply_trainability(nn::ParameterStore& store, int trainable_blocks) const = 0;
  /// Parameter-name prefix under which the backbone is registered.
  virtual std::string prefix() const = 0;
};

/// Deterministic mock: hashed tokens through a small seeded transformer.
/// Its weights depend only on its shape, never on the training seed.
class MockBackbone : public TextBackbone {
 public:
  MockBackbone(nn::ParameterStore& store, const PromptEncoderConfig& config);

  std::string id() const override;
  std::size_t hidden_size() const override { return encoder_.shape().hidden; }
  TokenizedText tokenize(const std::string& text) const override;
  ag::Var embed(const std::string& text) const override;
  void apply_trainability(nn::ParameterStore& store, int trainable_blocks) const override;
  std::string prefix() const override { return "backbone."; }

 private:
  HashTokenizer tokenizer_;
  std::size_t max_tokens_;
  TransformerEncoder encoder_;
};

/// Pretrained BERT from an exported weight archive plus a vocab.txt.
class BertBackbone : public TextBackbone {
 public:
  BertBackbone(nn::ParameterStore& store, const PromptEncoderConfig& config);

  std::string id() const override { return id_; }
  std::size_t hidden_size() const override { return encoder_->shape().hidden; }
  TokenizedText tokenize(const std::string& text) const override;
  ag::Var embed(const std::string& text) const override;
  void apply_trainability(nn::ParameterStore& store, int trainable_blocks) const override;
  std::string prefix() const override { return "backbone."; }

  static TransformerShape read_shape(const Archive& weights);

 private:
  std::unique_ptr<WordPieceTokenizer> tokenizer_;
  std::size_t max_tokens_;
  std::unique_ptr<TransformerEncoder> encoder_;
  std::string id_;
};

std::unique_ptr<TextBackbone> make_backbone(nn::ParameterStore& store, const PromptEncoderConfig& config);

}  // namespace promptts
