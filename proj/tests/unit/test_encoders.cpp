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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "oracles.hpp"
#include "promptts/backbone.hpp"
#include "promptts/encoders.hpp"

using namespace promptts;
using ag::Var;

namespace {

GMMParams random_gmm(Rng& rng, std::size_t k, std::size_t d) {
  GMMParams g;
  g.components = k;
  g.dim = d;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    g.weights.push_back(0.1 + rng.uniform());
    total += g.weights.back();
  }
  for (auto& w : g.weights) w /= total;
  for (std::size_t i = 0; i < k * d; ++i) {
    g.means.push_back(0.5 * rng.normal());
    g.scales.push_back(0.3 + rng.uniform());
  }
  return g;
}

double norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

ReferenceEncoderConfig small_reference() {
  ReferenceEncoderConfig c;
  c.conv_channels = {4, 4, 8};
  c.gru_units = 8;
  c.num_tokens = 5;
  c.token_dim = 8;
  c.attention_heads = 2;
  c.embed_dim = 6;
  return c;
}

}  // namespace

TEST_CASE("mdn_nll closed forms") {
  GMMParams one{1, 2, {1.0}, {0.0, 0.0}, {1.0, 1.0}};
  CHECK(mdn_nll(one, std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

  Rng rng(1);
  auto g = random_gmm(rng, 1, 5);
  GMMParams dup{2, 5, {0.5, 0.5}, g.means, g.scales};
  dup.means.insert(dup.means.end(), g.means.begin(), g.means.end());
  dup.scales.insert(dup.scales.end(), g.scales.begin(), g.scales.end());
  const std::vector<double> x{0.1, -0.2, 0.3, 0.0, 1.0};
  CHECK(mdn_nll(dup, x) == doctest::Approx(mdn_nll(g, x)).epsilon(1e-14));

  CHECK_THROWS_AS(mdn_nll(one, std::vector<double>{0.0}), EncoderError);
  GMMParams tiny{1, 1, {1.0}, {0.0}, {1e-200}};
  CHECK_THROWS_AS(mdn_nll(tiny, std::vector<double>{1.0}), EncoderError);
}

TEST_CASE("mdn_nll agrees with direct summation and ignores component order") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_gmm(rng, 10, 8);
    std::vector<double> x(8);
    for (auto& v : x) v = 0.5 * rng.normal();
    const double ref = testing::brute_force_gmm_nll(g.weights, g.means, g.scales, x);
    CHECK(std::abs(mdn_nll(g, x) - ref) < 1e-6);

    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    GMMParams p = g;
    for (std::size_t k = 0; k < 10; ++k) {
      p.weights[k] = g.weights[perm[k]];
      std::copy_n(g.means.begin() + perm[k] * 8, 8, p.means.begin() + k * 8);
      std::copy_n(g.scales.begin() + perm[k] * 8, 8, p.scales.begin() + k * 8);
    }
    CHECK(mdn_nll(p, x) == doctest::Approx(mdn_nll(g, x)).epsilon(1e-12));
  }
}

TEST_CASE("differentiable mdn_nll gradient and value") {
  Rng rng(3);
  const std::size_t n = 3, k = 3, d = 4;
  std::vector<double> raw(n * (k + 2 * k * d)), tgt(n * d);
  for (auto& v : raw) v = 0.3 * rng.normal();
  for (auto& v : tgt) v = 0.5 * rng.normal();
  Var leaf = Var::leaf(n, k + 2 * k * d, raw);
  Var targets = Var::constant(n, d, tgt);
  auto loss = [&] { return mdn_nll(split_mixture(leaf, k, d, 1e-4), targets); };

  Var l = loss();
  double mean_ref = 0.0;
  auto gv = split_mixture(leaf, k, d, 1e-4);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = gv.row(r);
    CHECK_NOTHROW(row.validate());
    mean_ref += mdn_nll(row, std::span<const double>(tgt).subspan(r * d, d)) / n;
  }
  CHECK(l.item() == doctest::Approx(mean_ref).epsilon(1e-12));

  leaf.zero_grad();
  l.backward();
  auto numeric = testing::numeric_gradient([&] { return loss().item(); }, leaf);
  CHECK(testing::relative_error(leaf.grad(), numeric) < 1e-4);
}

TEST_CASE("sampling") {
  Rng rng(4);

  SUBCASE("zero temperature returns the normalized mean") {
    GMMParams g{1, 3, {1.0}, {3.0, 0.0, 4.0}, {1.0, 2.0, 3.0}};
    auto v = mdn_sample(g, rng, 0.0);
    CHECK(v == std::vector<double>{0.6, 0.0, 0.8});
    CHECK(norm(mdn_sample(g, rng, 1.0)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mdn_sample(g, rng, -1.0), EncoderError);
  }

  SUBCASE("argmax picks the heaviest component") {
    GMMParams g{2, 1, {0.3, 0.7}, {-1.0, 2.0}, {1.0, 1.0}};
    CHECK(mdn_sample_raw(g, rng, 1.0, MdnMode::kArgmax) == std::vector<double>{2.0});
  }

  SUBCASE("component frequencies") {
    GMMParams g{3, 1, {0.2, 0.5, 0.3}, {-100.0, 0.0, 100.0}, {1e-3, 1e-3, 1e-3}};
    const int n = 100000;
    std::array<int, 3> counts{};
    for (int i = 0; i < n; ++i) {
      const double v = mdn_sample_raw(g, rng)[0];
      ++counts[v < -50 ? 0 : (v > 50 ? 2 : 1)];
    }
    for (std::size_t kk = 0; kk < 3; ++kk) {
      const double w = g.weights[kk];
      CHECK(std::abs(counts[kk] / double(n) - w) <= 3.0 * std::sqrt(w * (1 - w) / n));
    }
  }

  SUBCASE("variance grows with temperature") {
    GMMParams g{1, 1, {1.0}, {0.5}, {0.7}};
    double prev = -1.0;
    for (double t : {0.25, 0.5, 1.0, 2.0}) {
      Rng r(8);
      double s = 0, s2 = 0;
      for (int i = 0; i < 20000; ++i) {
        const double v = mdn_sample_raw(g, r, t)[0];
        s += v;
        s2 += v * v;
      }
      const double var = s2 / 20000 - (s / 20000) * (s / 20000);
      CHECK(var == doctest::Approx(0.49 * t * t).epsilon(0.05));
      CHECK(var > prev);
      prev = var;
    }
  }

  SUBCASE("seeded draws repeat") {
    auto g = random_gmm(rng, 4, 6);
    Rng a(5), b(5);
    CHECK(mdn_sample(g, a) == mdn_sample(g, b));
  }
}

TEST_CASE("cosine loss") {
  const std::vector<double> t{1.0, 2.0, 2.0};
  CHECK(cosine_loss(t, t) == doctest::Approx(0.0));
  CHECK(cosine_loss(std::vector<double>{-1.0, -2.0, -2.0}, t) == doctest::Approx(2.0));
  CHECK(cosine_loss(std::vector<double>{2.0, -1.0, 0.0}, t) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_loss(std::vector<double>{0.0, 0.0, 0.0}, t), EncoderError);

  Rng rng(6);
  std::vector<double> p(6), q(6);
  for (auto& v : p) v = rng.normal();
  for (auto& v : q) v = rng.normal();
  Var pv = Var::leaf(2, 3, p);
  Var qv = Var::constant(2, 3, q);
  auto f = [&] { return cosine_loss(pv, qv); };
  const double expect = 0.5 * (cosine_loss(std::span(p).first(3), std::span(q).first(3)) +
                               cosine_loss(std::span(p).last(3), std::span(q).last(3)));
  Var l = f();
  CHECK(l.item() == doctest::Approx(expect).epsilon(1e-12));
  l.backward();
  CHECK(testing::relative_error(pv.grad(), testing::numeric_gradient([&] { return f().item(); }, pv)) < 1e-6);
}

TEST_CASE("style token attention") {
  Rng rng(7);
  nn::ParameterStore store;
  auto cfg = small_reference();
  StyleTokenBank bank(store, "gst", 8, cfg, rng);
  Var query = Var::row({0.3, -0.2, 0.5, 0.1, 0.0, 0.4, -0.6, 0.2});

  SUBCASE("weights per head sum to one") {
    auto r = gst_attention(query, bank);
    REQUIRE(r.weights.size() == 2 * 5);
    for (std::size_t h = 0; h < 2; ++h) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += r.weights[h * 5 + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("equal keys give uniform weights") {
    auto tokens = bank.tokens();
    auto& tv = tokens.mutable_value();
    for (std::size_t j = 1; j < 5; ++j) std::copy_n(tv.begin(), 8, tv.begin() + j * 8);
    for (double w : gst_attention(query, bank).weights) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
  }

  SUBCASE("a key aligned with the query wins") {
    // Identity key and query maps make the logits plain dot products.
    auto kw = bank.key_projection().weight, qw = bank.query_projection().weight;
    auto& k = kw.mutable_value();
    auto& q = qw.mutable_value();
    std::fill(k.begin(), k.end(), 0.0);
    std::fill(q.begin(), q.end(), 0.0);
    for (std::size_t i = 0; i < 8; ++i) k[i * 8 + i] = q[i * 8 + i] = 1.0;
    for (auto b : {bank.key_projection().bias, bank.query_projection().bias}) {
      auto& bv = b.mutable_value();
      std::fill(bv.begin(), bv.end(), 0.0);
    }
    auto tokens = bank.tokens();
    auto& tv = tokens.mutable_value();
    for (std::size_t i = 0; i < 8; ++i) tv[3 * 8 + i] = 10.0 * query.value()[i];
    auto w = gst_attention(query, bank).weights;
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t j = 0; j < 5; ++j)
        if (j != 3) CHECK(w[h * 5 + 3] > w[h * 5 + j]);
  }

  SUBCASE("query shape is checked") { CHECK_THROWS_AS(gst_attention(Var::row({1.0, 2.0}), bank), EncoderError); }
}

TEST_CASE("reference encoder") {
  Rng rng(8);
  nn::ParameterStore store;
  auto cfg = small_reference();
  ReferenceEncoder enc(store, "ref", cfg, 20, rng);
  std::vector<double> mel(13 * 20);
  for (auto& v : mel) v = rng.normal();

  auto e = enc.encode(mel, 13);
  CHECK(e.size() == 6);
  CHECK(norm(e) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(enc.encode(mel, 13) == e);
  CHECK(norm(enc.encode(std::span(mel).first(20), 1)) == doctest::Approx(1.0).epsilon(1e-5));

  SUBCASE("norm holds for scaled parameters") {
    for (const auto& p : store.all()) {
      auto v = p.var;
      for (auto& x : v.mutable_value()) x *= 3.0;
    }
    CHECK(norm(enc.encode(mel, 13)) == doctest::Approx(1.0).epsilon(1e-5));
  }

  SUBCASE("uniform attention closed form") {
    auto qw = enc.bank().query_projection().weight, qb = enc.bank().query_projection().bias;
    std::fill(qw.mutable_value().begin(), qw.mutable_value().end(), 0.0);
    std::fill(qb.mutable_value().begin(), qb.mutable_value().end(), 0.0);
    Var values = enc.bank().value_projection()(enc.bank().tokens());
    Var mean_row = ag::sum_rows(values) * (1.0 / 5.0);
    auto expect = ag::l2_normalize_rows(enc.bank().output_projection()(mean_row)).value();
    auto got = enc.encode(mel, 13);
    for (std::size_t i = 0; i < 6; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  }
}

TEST_CASE("default configurations build the documented shapes") {
  Rng rng(9);
  nn::ParameterStore store;
  ReferenceEncoderConfig rc;
  ReferenceEncoder enc(store, "ref", rc, 80, rng);
  CHECK(enc.embed_dim() == 256);
  CHECK(enc.bank().tokens().rows() == 10);
  CHECK(enc.bank().tokens().cols() == 256);
  CHECK(enc.bank().heads() == 4);

  PromptEncoderConfig pc;
  PromptHead head(store, "head", 32, 256, pc, true, rng);
  std::vector<double> x(32, 0.1);
  auto g = head.mixture(Var::row(x)).row(0);
  CHECK(g.weights.size() == 10);
  CHECK(g.means.size() == 10 * 256);
  CHECK(g.scales.size() == 10 * 256);
  CHECK_NOTHROW(g.validate());

  auto pw = head.projection().weight, pb = head.projection().bias;
  std::fill(pw.mutable_value().begin(), pw.mutable_value().end(), 0.0);
  std::fill(pb.mutable_value().begin(), pb.mutable_value().end(), 0.0);
  auto z = head.mixture(Var::row(x)).row(0);
  for (double w : z.weights) CHECK(w == doctest::Approx(0.1).epsilon(1e-12));
  for (double m : z.means) CHECK(m == 0.0);
  for (double s : z.scales) CHECK(s == 1.0);
  CHECK_THROWS_AS(head.direct(Var::row(x)), EncoderError);

  PromptHead cos_head(store, "cos", 32, 256, pc, false, rng);
  CHECK(cos_head.direct(Var::row(x)).cols() == 256);
}

TEST_CASE("scale floor") {
  std::vector<double> raw{0.0, 0.0, -50.0};
  auto g = split_mixture(Var::row(raw), 1, 1, 1e-4).row(0);
  CHECK(g.scales[0] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK_THROWS_AS(split_mixture(Var::row({0.0, 0.0}), 1, 1, 1e-4), EncoderError);
}

TEST_CASE("mock backbone") {
  nn::ParameterStore store;
  PromptEncoderConfig pc;
  MockBackbone mock(store, pc);
  auto v = mock.embed("abc").value();
  REQUIRE(v.size() == 256);
  const std::array<double, 4> golden{-0.59524754547718872, -0.70425716887681744, -1.0415687221163821,
                                     -0.15730821575515017};
  for (std::size_t i = 0; i < golden.size(); ++i) CHECK(v[i] == doctest::Approx(golden[i]).epsilon(1e-9));
  CHECK(mock.embed("abc").value() == v);
  CHECK(mock.tokenize("abc").ids.front() == 0);
  CHECK_THROWS(mock.embed(""));

  nn::ParameterStore other;
  MockBackbone again(other, pc);
  CHECK(again.embed("abc").value() == v);

  SUBCASE("only the last block receives gradients") {
    mock.apply_trainability(store, 1);
    store.zero_grad();
    Var out = mock.embed("a woman speaks slowly");
    ag::sum(ag::square(out)).backward();
    const std::string last = "backbone.encoder.layer.1.";
    double frozen = 0.0, trainable = 0.0;
    for (const auto& p : store.all()) {
      double g = 0.0;
      for (double x : p.var.grad()) g += x * x;
      if (p.name.rfind(last, 0) == 0) {
        CHECK(p.var.requires_grad());
        trainable += g;
      } else {
        CHECK_FALSE(p.var.requires_grad());
        frozen += g;
      }
    }
    CHECK(frozen == 0.0);
    CHECK(trainable > 0.0);
  }
}
