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

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "promptts/pipeline.hpp"

namespace promptts {
namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& points) {
  const std::size_t n = points.size();
  const std::size_t d = n ? points[0].size() : 0;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != d) throw PipelineError("points differ in dimension");
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = points[i][j];
  }
  return x;
}

}  // namespace

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& points) {
  std::vector<std::array<double, 2>> out(points.size(), {0.0, 0.0});
  if (points.size() < 2) return out;
  Eigen::MatrixXd x = to_matrix(points);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  for (int axis = 0; axis < 2 && axis < d; ++axis) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - axis);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (std::size_t i = 0; i < out.size(); ++i) out[i][static_cast<std::size_t>(axis)] = proj(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<std::array<double, 2>> tsne_2d(const std::vector<std::vector<double>>& points, std::uint64_t seed,
                                           double perplexity, std::size_t iterations) {
  const std::size_t n = points.size();
  std::vector<std::array<double, 2>> y(n, {0.0, 0.0});
  if (n < 2) return y;
  const Eigen::MatrixXd x = to_matrix(points);
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * x * x.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);

  const double perp = std::min(perplexity, std::max(1.0, static_cast<double>(n - 1) / 3.0));
  const double target = std::log(perp);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, dot = 0.0;
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        if (j == i) continue;
        const double v = std::exp(-d2(i, j) * beta);
        p(i, j) = v;
        sum += v;
        dot += d2(i, j) * v;
      }
      if (!(sum > 0.0)) {
        hi = beta;
        beta = (lo + hi) / 2.0;
        continue;
      }
      const double entropy = std::log(sum) + beta * dot / sum;
      for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (lo + hi) / 2.0;
      } else {
        hi = beta;
        beta = (lo + hi) / 2.0;
      }
    }
  }
  p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  Rng rng(derive_seed(seed, "tsne"));
  Eigen::MatrixXd pos(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < pos.rows(); ++i)
    for (int k = 0; k < 2; ++k) pos(i, k) = 1e-4 * rng.normal();
  Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(pos.rows(), 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(pos.rows(), 2);
  const double eta = std::max(static_cast<double>(n) / (4.0 * 12.0), 50.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    const double exaggeration = it < 100 ? 12.0 : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    const Eigen::VectorXd ysq = pos.rowwise().squaredNorm();
    Eigen::MatrixXd num = (-2.0 * pos * pos.transpose()).colwise() + ysq;
    num.rowwise() += ysq.transpose();
    num = (num.array() + 1.0).inverse().matrix();
    num.diagonal().setZero();
    const double total = num.sum();
    const Eigen::MatrixXd q = (num / total).cwiseMax(1e-12);
    const Eigen::MatrixXd w = ((exaggeration * p - q).array() * num.array()).matrix();
    Eigen::MatrixXd grad = 4.0 * (w.rowwise().sum().asDiagonal() * pos - w * pos);
    for (Eigen::Index i = 0; i < pos.rows(); ++i)
      for (int k = 0; k < 2; ++k) {
        const bool same = (grad(i, k) > 0) == (vel(i, k) > 0);
        gains(i, k) = std::max(same ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
        vel(i, k) = momentum * vel(i, k) - eta * gains(i, k) * grad(i, k);
        pos(i, k) += vel(i, k);
      }
    pos.rowwise() -= pos.colwise().mean();
  }
  for (std::size_t i = 0; i < n; ++i) y[i] = {pos(static_cast<Eigen::Index>(i), 0), pos(static_cast<Eigen::Index>(i), 1)};
  return y;
}

}  // namespace promptts
