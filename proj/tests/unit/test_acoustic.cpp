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

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "promptts/acoustic.hpp"

using namespace promptts;
using ag::Var;

namespace {

AcousticConfig small_acoustic() {
  AcousticConfig c;
  c.hidden = 16;
  c.conformer_blocks = 1;
  c.conformer_heads = 2;
  c.conformer_ff_mult = 2;
  c.conformer_kernel = 5;
  c.variance_filter = 16;
  c.decoder_layers = 2;
  c.decoder_channels = 8;
  c.diffusion_steps = 10;
  return c;
}

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("content encoder") {
  Rng rng(1);
  nn::ParameterStore store;
  auto cfg = small_acoustic();
  PhoneSet phones({"a", "b", "c", "d", "e"});
  ContentEncoder enc(store, "content", cfg, phones.size(), 4, rng);
  Var style = Var::row({0.5, -0.5, 0.5, -0.5});
  auto ids = phones.ids({"a", "b", "c", "d", "e"});
  Var h = enc.forward(ids, style);
  CHECK(h.rows() == 5);
  CHECK(h.cols() == 16);
  CHECK(enc.forward(ids, style).value() == h.value());

  std::vector<std::size_t> rev(ids.rbegin(), ids.rend());
  Var hr = enc.forward(rev, style);
  bool differs = false;
  for (std::size_t r = 0; r < 5 && !differs; ++r)
    for (std::size_t c = 0; c < 16; ++c)
      if (std::abs(hr.at(r, c) - h.at(4 - r, c)) > 1e-9) differs = true;
  CHECK(differs);

  CHECK_THROWS_WITH_AS(phones.ids({"a", "zz"}), doctest::Contains("unknown phoneme"), AcousticError);
  CHECK_THROWS_AS(enc.forward({}, style), AcousticError);
  CHECK_THROWS_AS(PhoneSet({"a", "a"}), AcousticError);
}

TEST_CASE("duration mixtures") {
  SUBCASE("single component at log 5") {
    GmmVars g;
    g.components = 1;
    g.dim = 1;
    g.logits = Var::constant(2, 1, 0.0);
    g.means = Var::constant(2, 1, std::log(5.0));
    g.log_scales = Var::constant(2, 1, 0.0);
    CHECK(infer_durations(g) == std::vector<std::size_t>{5, 5});
  }

  SUBCASE("rounding and clamping") {
    CHECK(round_duration(std::log(2.5)) == 3);
    CHECK(round_duration(std::log(2.49)) == 2);
    CHECK(round_duration(-5.0) == 1);
    CHECK(duration_target(0) == 0.0);
    CHECK(duration_target(4) == doctest::Approx(std::log(4.0)));
  }

  SUBCASE("predictor loss matches the direct oracle and its gradient") {
    Rng rng(2);
    nn::ParameterStore store;
    auto cfg = small_acoustic();
    DurationPredictor dp(store, "dur", cfg, rng);
    CHECK(dp.components() == 4);
    Var hidden = Var::leaf(6, 16, normals(rng, 96));
    const std::vector<std::size_t> durs{3, 0, 7, 1, 12, 2};
    auto g = dp.forward(hidden);
    double ref = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      auto row = g.row(r);
      double s = 0.0;
      for (double w : row.weights) s += w;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      ref += testing::brute_force_gmm_nll(row.weights, row.means, row.scales, {duration_target(durs[r])}) / 6.0;
    }
    Var l = dp.loss(g, durs);
    CHECK(std::abs(l.item() - ref) < 1e-6);

    auto f = [&] { return dp.loss(dp.forward(hidden), durs); };
    hidden.zero_grad();
    f().backward();
    auto numeric = testing::numeric_gradient([&] { return f().item(); }, hidden);
    CHECK(testing::relative_error(hidden.grad(), numeric) < 1e-4);
    CHECK_THROWS_AS(dp.loss(g, {1, 2}), AcousticError);
  }
}

TEST_CASE("length regulation") {
  Var h = Var::constant(2, 2, std::vector<double>{1, 2, 3, 4});
  std::vector<std::size_t> d{2, 3};
  Var out = length_regulate(h, d);
  CHECK(out.rows() == 5);
  CHECK(out.value() == std::vector<double>{1, 2, 1, 2, 3, 4, 3, 4, 3, 4});

  bool degenerate = false;
  std::vector<std::size_t> zeros{0, 0};
  CHECK(length_regulate(h, zeros, &degenerate).rows() == 0);
  CHECK(degenerate);

  std::vector<std::size_t> ones{1, 1};
  CHECK(length_regulate(h, ones).value() == h.value());

  std::vector<long long> neg{1, -1};
  CHECK_THROWS_WITH_AS(length_regulate(h, neg), doctest::Contains("negative"), AcousticError);
  std::vector<std::size_t> three{1, 1, 1};
  CHECK_THROWS_AS(length_regulate(h, three), AcousticError);
}

TEST_CASE("pitch predictor") {
  Rng rng(3);
  nn::ParameterStore store;
  auto cfg = small_acoustic();
  PitchPredictor pp(store, "pitch", cfg, rng);
  Var frames = Var::constant(9, 16, normals(rng, 9 * 16));
  auto out = pp.forward(frames, std::log(150.0));
  CHECK(out.log_f0.rows() == 9);
  CHECK(out.vuv.rows() == 9);
  for (double v : out.vuv.value()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(pp.embed(out.log_f0, out.vuv, std::log(150.0)).rows() == 9);

  PitchOutputs perfect{Var::constant(3, 1, std::vector<double>{5.0, 5.1, 5.2}),
                       Var::constant(3, 1, std::vector<double>{1.0, 0.0, 1.0})};
  const std::vector<double> lf{5.0, 5.1, 5.2};
  const std::vector<std::uint8_t> uv{1, 0, 1};
  CHECK(pitch_loss(perfect, lf, uv).item() == 0.0);
  CHECK_THROWS_AS(pp.forward(Var::constant(0, 16), 0.0), AcousticError);
}

TEST_CASE("diffusion schedules") {
  for (const auto& name : shipped_schedules()) {
    auto s = make_schedule(name, 100);
    CHECK(s.steps() == 100);
    double prod = 1.0;
    for (std::size_t t = 1; t <= 100; ++t) {
      prod *= s.alpha(t);
      CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
      if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.posterior_variance(1) == 0.0);
  }
  auto lin = DiffusionSchedule::linear(100, 1e-4, 0.06);
  CHECK(lin.beta(1) == doctest::Approx(1e-4));
  CHECK(lin.beta(100) == doctest::Approx(0.06));
  CHECK_THROWS_AS(lin.beta(0), AcousticError);
  CHECK_THROWS_AS(lin.beta(101), AcousticError);
  CHECK_THROWS_AS(make_schedule("quadratic", 10), AcousticError);
  CHECK_THROWS_AS(DiffusionSchedule::from_betas({0.5, 1.0}), AcousticError);
}

TEST_CASE("q_sample algebra") {
  // Single step with beta 0.75 gives abar 0.25.
  auto s = DiffusionSchedule::from_betas({0.75});
  auto x = q_sample(std::vector<double>{2.0}, 1, std::vector<double>{1.0}, s);
  CHECK(x[0] == doctest::Approx(1.0 + std::sqrt(0.75)).epsilon(1e-12));
  CHECK(x[0] == doctest::Approx(1.8660).epsilon(1e-4));
  CHECK(q_sample(std::vector<double>{2.0}, 1, std::vector<double>{0.0}, s)[0] == 1.0);
  CHECK_THROWS_AS(q_sample(std::vector<double>{2.0}, 2, std::vector<double>{0.0}, s), AcousticError);

  auto sched = make_schedule("linear", 100);
  Rng rng(4);
  auto x0 = normals(rng, 40), noise = normals(rng, 40);
  for (std::size_t t : {1, 37, 100}) {
    auto rec = predict_x0(q_sample(x0, t, noise, sched), t, noise, sched);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(rec[i] - x0[i]) < 1e-10);
  }
}

TEST_CASE("oracle reverse chain") {
  auto sched = make_schedule("linear", 10, 1e-4, 0.3);
  Rng rng(5);
  auto x0 = normals(rng, 24);
  auto xt = normals(rng, 24);
  Rng chain(6);
  for (std::size_t t = 10; t >= 1; --t) {
    // The noise that maps the stored x0 to the current x_t.
    std::vector<double> eps(24);
    for (std::size_t i = 0; i < 24; ++i)
      eps[i] = (xt[i] - std::sqrt(sched.alpha_bar(t)) * x0[i]) / std::sqrt(1.0 - sched.alpha_bar(t));
    xt = denoise_step(xt, t, eps, sched, chain);
  }
  for (std::size_t i = 0; i < 24; ++i) CHECK(std::abs(xt[i] - x0[i]) < 1e-4);

  Rng a(1), b(2);
  auto s1 = denoise_step(x0, 1, x0, sched, a), s2 = denoise_step(x0, 1, x0, sched, b);
  CHECK(s1 == s2);
}

TEST_CASE("diffusion decoder") {
  Rng rng(7);
  nn::ParameterStore store;
  auto cfg = small_acoustic();
  DiffusionDecoder dec(store, "decoder", cfg, 80, 16, rng);
  auto sched = DiffusionSchedule::from_config(cfg);
  Var cond = Var::constant(7, 16, normals(rng, 7 * 16));
  Var x = Var::constant(7, 80, normals(rng, 7 * 80));
  for (std::size_t t = 1; t <= sched.steps(); ++t) {
    Var e = dec.predict_eps(x, t, cond);
    CHECK(e.rows() == 7);
    CHECK(e.cols() == 80);
    for (double v : e.value()) REQUIRE(std::isfinite(v));
  }
  CHECK(dec.predict_eps(x, 3, cond).value() == dec.predict_eps(x, 3, cond).value());
  CHECK_THROWS_AS(dec.predict_eps(Var::constant(7, 79), 1, cond), AcousticError);

  Rng g1(11), g2(11);
  auto m1 = generate(dec.as_eps_net(), cond, 80, sched, g1);
  auto m2 = generate(dec.as_eps_net(), cond, 80, sched, g2);
  CHECK(m1.size() == 7 * 80);
  CHECK(m1 == m2);
  for (double v : m1) CHECK(std::isfinite(v));

  auto full = make_schedule("linear", 100);
  Rng g3(12);
  for (double v : generate(dec.as_eps_net(), cond, 80, full, g3)) REQUIRE(std::isfinite(v));
}

TEST_CASE("diffusion loss") {
  auto sched = make_schedule("linear", 100);
  Rng rng(8);
  const std::size_t n = 6, m = 5;
  Var x0 = Var::constant(n, m, normals(rng, n * m));
  Var cond = Var::constant(n, 3, normals(rng, n * 3));
  auto noise = normals(rng, n * m);

  EpsNet oracle = [&](const Var&, std::size_t, const Var&) { return Var::constant(n, m, noise); };
  CHECK(diffusion_loss(oracle, x0, cond, 17, noise, sched).item() == 0.0);

  EpsNet zero = [&](const Var& xt, std::size_t, const Var&) { return Var::constant(xt.rows(), xt.cols(), 0.0); };
  double acc = 0.0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    const double l = diffusion_loss(zero, x0, cond, sched, rng).item();
    CHECK(l >= 0.0);
    acc += l;
  }
  CHECK(acc / draws == doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(0.01));

  SUBCASE("toy network gradient") {
    Var w1 = Var::leaf(m + 3, 4, normals(rng, (m + 3) * 4));
    Var w2 = Var::leaf(4, m, normals(rng, 4 * m));
    EpsNet net = [&](const Var& xt, std::size_t t, const Var& c) {
      std::vector<Var> parts{xt, c * (1.0 / static_cast<double>(t))};
      return ag::matmul(ag::tanh(ag::matmul(ag::concat_cols(parts), w1)), w2);
    };
    auto f = [&] { return diffusion_loss(net, x0, cond, 23, noise, sched); };
    w1.zero_grad();
    w2.zero_grad();
    f().backward();
    CHECK(testing::relative_error(w1.grad(), testing::numeric_gradient([&] { return f().item(); }, w1)) < 1e-4);
    CHECK(testing::relative_error(w2.grad(), testing::numeric_gradient([&] { return f().item(); }, w2)) < 1e-4);
  }
}

TEST_CASE("default acoustic configuration") {
  AcousticConfig c;
  CHECK(c.duration_mixtures == 4);
  CHECK(c.decoder_layers == 20);
  CHECK(c.decoder_channels == 256);
  CHECK(c.diffusion_steps == 100);
  auto s = DiffusionSchedule::from_config(c);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(100) == doctest::Approx(0.06));
}
