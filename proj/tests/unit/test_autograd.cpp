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
#include <functional>

#include "oracles.hpp"
#include "promptts/autograd.hpp"
#include "promptts/random.hpp"

using namespace promptts;
using ag::Var;

namespace {

Var random_leaf(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * rng.normal();
  return Var::leaf(r, c, v);
}

// Checks d(sum(w * f(leaves)))/d(leaves) against finite differences; w fixes
// a random projection so every output element matters.
void check_gradients(std::vector<Var> leaves, const std::function<Var(const std::vector<Var>&)>& f,
                     double tol = 1e-6) {
  Rng rng(99);
  Var probe = f(leaves);
  std::vector<double> w(probe.size());
  for (auto& x : w) x = rng.normal();
  auto loss = [&]() {
    Var out = f(leaves);
    return ag::sum(out * Var::constant(out.rows(), out.cols(), w));
  };
  Var l = loss();
  for (auto& leaf : leaves) leaf.zero_grad();
  l.backward();
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) continue;
    std::vector<double> analytic = leaf.grad();
    if (analytic.empty()) analytic.assign(leaf.size(), 0.0);
    auto numeric = testing::numeric_gradient([&] { return loss().item(); }, leaf);
    CHECK(testing::relative_error(analytic, numeric) < tol);
  }
}

}  // namespace

TEST_CASE("elementwise, broadcast and reduction gradients") {
  Rng rng(1);
  Var a = random_leaf(rng, 3, 4), b = random_leaf(rng, 3, 4), row = random_leaf(rng, 1, 4), col = random_leaf(rng, 3, 1);
  check_gradients({a, b}, [](const auto& v) { return v[0] * v[1] + v[0] - v[1] * 2.0; });
  check_gradients({a, row}, [](const auto& v) { return ag::add_row(v[0], v[1]) + ag::mul_row(v[0], v[1]); });
  check_gradients({a, col}, [](const auto& v) { return ag::add_col(v[0], v[1]) + ag::mul_col(v[0], v[1]); });
  check_gradients({a}, [](const auto& v) { return ag::sum_rows(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::sum_cols(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::mean(v[0]) + ag::sum(v[0]); });
}

TEST_CASE("unary op gradients") {
  Rng rng(2);
  Var a = random_leaf(rng, 2, 5);
  check_gradients({a}, [](const auto& v) { return ag::sigmoid(v[0]) + ag::tanh(v[0]) + ag::exp(v[0] * 0.3); });
  check_gradients({a}, [](const auto& v) { return ag::swish(v[0]) + ag::gelu(v[0]) + ag::square(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::log(ag::square(v[0]) + 0.5); });
  check_gradients({a}, [](const auto& v) { return ag::relu(v[0] + 0.01) + ag::abs(v[0] + 0.01); });
  check_gradients({a}, [](const auto& v) { return ag::clamp_min(v[0], -0.25); });
}

TEST_CASE("matrix and normalization gradients") {
  Rng rng(3);
  Var a = random_leaf(rng, 3, 4), b = random_leaf(rng, 4, 2);
  check_gradients({a, b}, [](const auto& v) { return ag::matmul(v[0], v[1]); });
  check_gradients({a}, [](const auto& v) { return ag::transpose(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::softmax_rows(v[0]) + ag::log_softmax_rows(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::logsumexp_rows(v[0]); });
  check_gradients({a}, [](const auto& v) { return ag::l2_normalize_rows(v[0]); });
  Var g = random_leaf(rng, 1, 4), be = random_leaf(rng, 1, 4);
  check_gradients({a, g, be}, [](const auto& v) { return ag::layer_norm(v[0], v[1], v[2]); });
}

TEST_CASE("structural op gradients") {
  Rng rng(4);
  Var a = random_leaf(rng, 4, 3), b = random_leaf(rng, 2, 3), c = random_leaf(rng, 4, 2);
  check_gradients({a}, [](const auto& v) { return ag::slice_rows(v[0], 1, 2) + ag::slice_cols(ag::slice_rows(v[0], 0, 2), 0, 3); });
  check_gradients({a, b}, [](const auto& v) {
    const Var parts[] = {v[0], v[1]};
    return ag::concat_rows(parts);
  });
  check_gradients({a, c}, [](const auto& v) {
    const Var parts[] = {v[0], v[1]};
    return ag::concat_cols(parts);
  });
  check_gradients({a}, [](const auto& v) { return ag::reshape(v[0], 2, 6); });
  const std::size_t counts[] = {2, 0, 1, 3};
  check_gradients({a}, [&](const auto& v) { return ag::repeat_rows(v[0], counts); });
  const std::size_t ids[] = {3, 0, 3, 1};
  check_gradients({a}, [&](const auto& v) { return ag::gather_rows(v[0], ids); });
}

TEST_CASE("convolution helper gradients") {
  Rng rng(5);
  Var x = random_leaf(rng, 6, 3);
  check_gradients({x}, [](const auto& v) { return ag::im2col_1d(v[0], 3, 2); });
  Var w = random_leaf(rng, 5, 3);
  check_gradients({x, w}, [](const auto& v) { return ag::depthwise_conv1d(v[0], v[1]); });
  Var img = random_leaf(rng, 5 * 4, 2);
  check_gradients({img}, [](const auto& v) { return ag::im2col_2d(v[0], 5, 4, 3, 2, 1); });
}

TEST_CASE("fused mixture NLL gradient matches finite differences") {
  Rng rng(6);
  const std::size_t n = 3, k = 3, d = 4;
  Var logits = random_leaf(rng, n, k), means = random_leaf(rng, n, k * d), log_scales = random_leaf(rng, n, k * d, 0.3),
      targets = random_leaf(rng, n, d);
  check_gradients({logits, means, log_scales, targets},
                  [](const auto& v) { return ag::gmm_nll_rows(v[0], v[1], v[2], v[3]); });
}

TEST_CASE("im2col_1d layout places neighbours in kernel-major blocks") {
  Var x = Var::constant(3, 1, std::vector<double>{1, 2, 3});
  Var cols = ag::im2col_1d(x, 3, 1);
  CHECK(cols.value() == std::vector<double>{0, 1, 2, 1, 2, 3, 2, 3, 0});
}

TEST_CASE("no-grad guard builds no graph") {
  Var a = Var::leaf(1, 2, {1.0, 2.0});
  {
    ag::NoGradGuard guard;
    Var b = a * 3.0;
    CHECK_FALSE(b.requires_grad());
  }
  Var c = a * 3.0;
  CHECK(c.requires_grad());
}

TEST_CASE("detach blocks gradient flow") {
  Var a = Var::leaf(1, 2, {1.0, 2.0});
  Var loss = ag::sum(a.detach() * a);
  loss.backward();
  CHECK(a.grad() == std::vector<double>{1.0, 2.0});
}
