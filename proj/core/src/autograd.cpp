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

#include "promptts/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

namespace promptts::ag {
namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Node& n) {
  return ConstMapMat(n.value.data(), static_cast<Eigen::Index>(n.rows), static_cast<Eigen::Index>(n.cols));
}

[[noreturn]] void shape_error(const char* op, const Var& a, const Var& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + "]");
}

Var make(std::size_t rows, std::size_t cols, std::vector<double> value,
         std::initializer_list<const Var*> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var* p : parents) needs = needs || p->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var* p : parents) node->parents.push_back(p->shared());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Var make_n(std::size_t rows, std::size_t cols, std::vector<double> value, std::span<const Var> parents,
           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(const Var& x, F f, D dfdx) {
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make(x.rows(), x.cols(), std::move(out), {&x}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

}  // namespace

// ---------------------------------------------------------------------------

Var Var::constant(std::size_t rows, std::size_t cols, std::vector<double> value) {
  if (value.size() != rows * cols) throw std::invalid_argument("Var::constant: size mismatch");
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::constant(std::size_t rows, std::size_t cols, double fill) {
  return constant(rows, cols, std::vector<double>(rows * cols, fill));
}

Var Var::row(std::vector<double> value) {
  const std::size_t n = value.size();
  return constant(1, n, std::move(value));
}

Var Var::leaf(std::size_t rows, std::size_t cols, std::vector<double> value, bool requires_grad) {
  Var v = constant(rows, cols, std::move(value));
  v.node_->requires_grad = requires_grad;
  return v;
}

double Var::item() const {
  if (size() != 1) throw std::logic_error("Var::item: not a scalar");
  return node_->value[0];
}

void Var::backward() const {
  if (size() != 1) throw std::logic_error("Var::backward: root must be a scalar");
  if (!node_->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Intermediate grads are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

Var Var::detach() const { return constant(rows(), cols(), value()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), n = b.cols();
  std::vector<double> out(m * n);
  MapMat(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      view(*a.node()) * view(*b.node());
  return make(m, n, std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMapMat g(self.grad.data(), static_cast<Eigen::Index>(self.rows), static_cast<Eigen::Index>(self.cols));
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      MapMat(ga.data(), static_cast<Eigen::Index>(pa.rows), static_cast<Eigen::Index>(pa.cols)).noalias() +=
          g * view(pb).transpose();
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      MapMat(gb.data(), static_cast<Eigen::Index>(pb.rows), static_cast<Eigen::Index>(pb.cols)).noalias() +=
          view(pa).transpose() * g;
    }
  });
}

Var transpose(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& v = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make(n, m, std::move(out), {&a}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Var operator+(const Var& a, const Var& b) {
  require_same("add", a, b);
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var operator-(const Var& a, const Var& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var operator*(const Var& a, const Var& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var operator-(const Var& a) { return a * -1.0; }

Var operator*(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}
Var operator*(double s, const Var& a) { return a * s; }
Var operator+(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
Var operator-(const Var& a, double s) { return a + (-s); }

// ---------------------------------------------------------------------------

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("add_row", x, row);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.value());
  const auto& r = row.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return make(m, n, std::move(out), {&x, &row}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pr = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pr.requires_grad) {
      auto& g = pr.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Var mul_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("mul_row", x, row);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.value());
  const auto& r = row.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= r[j];
  return make(m, n, std::move(out), {&x, &row}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pr = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pr.value[j];
    }
    if (pr.requires_grad) {
      auto& g = pr.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * px.value[i * n + j];
    }
  });
}

Var add_col(const Var& x, const Var& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) shape_error("add_col", x, col);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.value());
  const auto& c = col.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += c[i];
  return make(m, n, std::move(out), {&x, &col}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pc = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pc.requires_grad) {
      auto& g = pc.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j];
    }
  });
}

Var mul_col(const Var& x, const Var& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) shape_error("mul_col", x, col);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.value());
  const auto& c = col.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= c[i];
  return make(m, n, std::move(out), {&x, &col}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pc = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pc.value[i];
    }
    if (pc.requires_grad) {
      auto& g = pc.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j] * px.value[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var swish(const Var& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var gelu(const Var& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var clamp_min(const Var& x, double lo) {
  return unary(
      x, [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return make(1, 1, {s}, {&x}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty input");
  return sum(x) * (1.0 / static_cast<double>(x.size()));
}

Var sum_rows(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(n, 0.0);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
  return make(1, n, std::move(out), {&x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j];
  });
}

Var sum_cols(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m, 0.0);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += v[i * n + j];
  return make(m, 1, std::move(out), {&x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

Var softmax_rows(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, v[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(v[i * n + j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make(m, n, std::move(out), {&x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, v[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(v[i * n + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i * n + j] - lse;
  }
  return make(m, n, std::move(out), {&x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gs;
    }
  });
}

Var logsumexp_rows(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, v[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(v[i * n + j] - mx);
    out[i] = mx + std::log(z);
  }
  return make(m, 1, std::move(out), {&x}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += self.grad[i] * std::exp(p.value[i * n + j] - self.value[i]);
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.value());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += out[i * n + j] * out[i * n + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
  }
  return make(m, n, std::move(out), {&x}, [m, n, norms](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += (self.grad[i * n + j] - self.value[i * n + j] * dot) / norms[i];
    }
  });
}

// ---------------------------------------------------------------------------

Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  if (start + count > x.rows()) throw std::out_of_range("slice_rows: range exceeds rows");
  const std::size_t n = x.cols();
  std::vector<double> out(x.value().begin() + static_cast<std::ptrdiff_t>(start * n),
                          x.value().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make(count, n, std::move(out), {&x}, [start, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  if (start + count > x.cols()) throw std::out_of_range("slice_cols: range exceeds cols");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * count);
  const auto& v = x.value();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * n + start), count,
                out.begin() + static_cast<std::ptrdiff_t>(i * count));
  return make(m, count, std::move(out), {&x}, [m, n, start, count](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", parts[0], p);
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_n(m, n, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_error("concat_cols", parts[0], p);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.value().begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                  out.begin() + static_cast<std::ptrdiff_t>(i * n + col));
    col += pc;
  }
  return make_n(m, n, std::move(out), parts, [m, n](Node& self) {
    std::size_t col = 0;
    for (auto& p : self.parents) {
      const std::size_t pc = p->cols;
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += self.grad[i * n + col + j];
      }
      col += pc;
    }
  });
}

Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.size()) throw std::invalid_argument("reshape: element count mismatch");
  return make(rows, cols, x.value(), {&x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var repeat_rows(const Var& x, std::span<const std::size_t> counts) {
  if (counts.size() != x.rows()) throw std::invalid_argument("repeat_rows: counts length != rows");
  const std::size_t n = x.cols();
  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::size_t> source;
  source.reserve(total);
  const auto& v = x.value();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t r = 0; r < counts[i]; ++r) {
      out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * n),
                 v.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
      source.push_back(i);
    }
  }
  return make(total, n, std::move(out), {&x}, [n, source = std::move(source)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < source.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[source[r] * n + j] += self.grad[r * n + j];
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const std::size_t n = table.cols();
  std::vector<double> out;
  out.reserve(ids.size() * n);
  const auto& v = table.value();
  for (auto id : ids) {
    if (id >= table.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(id * n),
               v.begin() + static_cast<std::ptrdiff_t>((id + 1) * n));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  const std::size_t rows = idx.size();
  return make(rows, n, std::move(out), {&table}, [n, idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
  });
}

// ---------------------------------------------------------------------------

Var im2col_1d(const Var& x, std::size_t kernel, std::size_t dilation) {
  if (kernel % 2 == 0) throw std::invalid_argument("im2col_1d: kernel must be odd");
  const std::size_t t_len = x.rows(), c = x.cols();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::size_t width = kernel * c;
  std::vector<double> out(t_len * width, 0.0);
  const auto& v = x.value();
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t k = 0; k < kernel; ++k) {
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                           (static_cast<std::ptrdiff_t>(k) - half) * static_cast<std::ptrdiff_t>(dilation);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      std::copy_n(v.begin() + src * static_cast<std::ptrdiff_t>(c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(t * width + k * c));
    }
  }
  return make(t_len, width, std::move(out), {&x}, [t_len, c, kernel, dilation, half, width](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t k = 0; k < kernel; ++k) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                             (static_cast<std::ptrdiff_t>(k) - half) * static_cast<std::ptrdiff_t>(dilation);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        for (std::size_t j = 0; j < c; ++j)
          g[static_cast<std::size_t>(src) * c + j] += self.grad[t * width + k * c + j];
      }
    }
  });
}

Var im2col_2d(const Var& x, std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
              std::size_t pad) {
  if (x.rows() != height * width) throw std::invalid_argument("im2col_2d: rows != height*width");
  if (height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0) {
    throw std::invalid_argument("im2col_2d: input smaller than kernel");
  }
  const std::size_t c = x.cols();
  const std::size_t ho = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (width + 2 * pad - kernel) / stride + 1;
  const std::size_t cols = kernel * kernel * c;
  // Precompute the source row for each (output position, kernel tap); -1 is padding.
  std::vector<std::ptrdiff_t> src(ho * wo * kernel * kernel, -1);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ky = 0; ky < kernel; ++ky)
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(height) ||
              ix >= static_cast<std::ptrdiff_t>(width))
            continue;
          src[((oy * wo + ox) * kernel + ky) * kernel + kx] = iy * static_cast<std::ptrdiff_t>(width) + ix;
        }
  std::vector<double> out(ho * wo * cols, 0.0);
  const auto& v = x.value();
  const std::size_t taps = kernel * kernel;
  for (std::size_t o = 0; o < ho * wo; ++o)
    for (std::size_t k = 0; k < taps; ++k) {
      std::ptrdiff_t s = src[o * taps + k];
      if (s < 0) continue;
      std::copy_n(v.begin() + s * static_cast<std::ptrdiff_t>(c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(o * cols + k * c));
    }
  return make(ho * wo, cols, std::move(out), {&x}, [c, cols, taps, n = ho * wo, src = std::move(src)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t k = 0; k < taps; ++k) {
        std::ptrdiff_t s = src[o * taps + k];
        if (s < 0) continue;
        for (std::size_t j = 0; j < c; ++j) g[static_cast<std::size_t>(s) * c + j] += self.grad[o * cols + k * c + j];
      }
  });
}

Var depthwise_conv1d(const Var& x, const Var& weight) {
  const std::size_t t_len = x.rows(), c = x.cols(), kernel = weight.rows();
  if (weight.cols() != c) shape_error("depthwise_conv1d", x, weight);
  if (kernel % 2 == 0) throw std::invalid_argument("depthwise_conv1d: kernel must be odd");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> out(t_len * c, 0.0);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t k = 0; k < kernel; ++k) {
      std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - half;
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_len)) continue;
      for (std::size_t j = 0; j < c; ++j) out[t * c + j] += wv[k * c + j] * xv[static_cast<std::size_t>(s) * c + j];
    }
  return make(t_len, c, std::move(out), {&x, &weight}, [t_len, c, kernel, half](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    const bool gx_on = px.requires_grad, gw_on = pw.requires_grad;
    std::vector<double>* gx = gx_on ? &px.ensure_grad() : nullptr;
    std::vector<double>* gw = gw_on ? &pw.ensure_grad() : nullptr;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t k = 0; k < kernel; ++k) {
        std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - half;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_len)) continue;
        const std::size_t su = static_cast<std::size_t>(s);
        for (std::size_t j = 0; j < c; ++j) {
          const double go = self.grad[t * c + j];
          if (gx) (*gx)[su * c + j] += go * pw.value[k * c + j];
          if (gw) (*gw)[k * c + j] += go * px.value[su * c + j];
        }
      }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.cols() != n || beta.cols() != n || gamma.rows() != 1 || beta.rows() != 1) {
    shape_error("layer_norm", x, gamma);
  }
  std::vector<double> xhat(m * n), out(m * n), inv_std(m);
  const auto& v = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += v[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (v[i * n + j] - mu) * (v[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (v[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return make(m, n, std::move(out), {&x, &gamma, &beta},
              [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                Node& px = *self.parents[0];
                Node& pg = *self.parents[1];
                Node& pb = *self.parents[2];
                if (pg.requires_grad) {
                  auto& g = pg.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * xhat[i * n + j];
                }
                if (pb.requires_grad) {
                  auto& g = pb.ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                }
                if (px.requires_grad) {
                  auto& g = px.ensure_grad();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dxh = self.grad[i * n + j] * pg.value[j];
                      s1 += dxh;
                      s2 += dxh * xhat[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dxh = self.grad[i * n + j] * pg.value[j];
                      g[i * n + j] += inv_std[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                    }
                  }
                }
              });
}

// ---------------------------------------------------------------------------

Var gmm_nll_rows(const Var& logits, const Var& means, const Var& log_scales, const Var& targets) {
  const std::size_t rows = logits.rows(), k_count = logits.cols(), dim = targets.cols();
  if (targets.rows() != rows || means.rows() != rows || log_scales.rows() != rows ||
      means.cols() != k_count * dim || log_scales.cols() != k_count * dim) {
    throw std::invalid_argument("gmm_nll_rows: inconsistent shapes");
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  // responsibilities gamma[n,k] are cached for the backward pass
  std::vector<double> out(rows), gamma(rows * k_count), weights(rows * k_count);
  const auto& lv = logits.value();
  const auto& mv = means.value();
  const auto& sv = log_scales.value();
  const auto& xv = targets.value();
  std::vector<double> a(k_count);
  for (std::size_t n = 0; n < rows; ++n) {
    double lmax = -INFINITY;
    for (std::size_t k = 0; k < k_count; ++k) lmax = std::max(lmax, lv[n * k_count + k]);
    double lz = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) lz += std::exp(lv[n * k_count + k] - lmax);
    const double log_norm = lmax + std::log(lz);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double log_w = lv[n * k_count + k] - log_norm;
      weights[n * k_count + k] = std::exp(log_w);
      double comp = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const std::size_t idx = n * k_count * dim + k * dim + d;
        const double z = (xv[n * dim + d] - mv[idx]) * std::exp(-sv[idx]);
        comp += -0.5 * z * z - sv[idx] - half_log_2pi;
      }
      a[k] = log_w + comp;
    }
    double amax = -INFINITY;
    for (double ak : a) amax = std::max(amax, ak);
    double az = 0.0;
    for (double ak : a) az += std::exp(ak - amax);
    const double lse = amax + std::log(az);
    out[n] = -lse;
    for (std::size_t k = 0; k < k_count; ++k) gamma[n * k_count + k] = std::exp(a[k] - lse);
  }
  return make(rows, 1, std::move(out), {&logits, &means, &log_scales, &targets},
              [rows, k_count, dim, gamma = std::move(gamma), weights = std::move(weights)](Node& self) {
                Node& pl = *self.parents[0];
                Node& pm = *self.parents[1];
                Node& ps = *self.parents[2];
                Node& px = *self.parents[3];
                std::vector<double>* gl = pl.requires_grad ? &pl.ensure_grad() : nullptr;
                std::vector<double>* gm = pm.requires_grad ? &pm.ensure_grad() : nullptr;
                std::vector<double>* gs = ps.requires_grad ? &ps.ensure_grad() : nullptr;
                std::vector<double>* gx = px.requires_grad ? &px.ensure_grad() : nullptr;
                for (std::size_t n = 0; n < rows; ++n) {
                  const double go = self.grad[n];
                  for (std::size_t k = 0; k < k_count; ++k) {
                    const double gk = gamma[n * k_count + k];
                    if (gl) (*gl)[n * k_count + k] += go * (weights[n * k_count + k] - gk);
                    for (std::size_t d = 0; d < dim; ++d) {
                      const std::size_t idx = n * k_count * dim + k * dim + d;
                      const double inv_s = std::exp(-ps.value[idx]);
                      const double diff = px.value[n * dim + d] - pm.value[idx];
                      const double z = diff * inv_s;
                      if (gm) (*gm)[idx] += -go * gk * z * inv_s;
                      if (gs) (*gs)[idx] += go * gk * (1.0 - z * z);
                      if (gx) (*gx)[n * dim + d] += go * gk * z * inv_s;
                    }
                  }
                }
              });
}

std::size_t graph_size(const Var& root) {
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  return seen.size();
}

}  // namespace promptts::ag
