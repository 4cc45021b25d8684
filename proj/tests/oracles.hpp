// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations for the test suite. Everything here is written
// independently of the library under test — plain loops over std::vector, or
// Eigen's own linear algebra — so a disagreement points at the library, not
// at shared code.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "kd/tensor.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Deterministic test inputs
// ---------------------------------------------------------------------------

inline std::vector<double> uniform(std::uint64_t seed, std::size_t n, double lo,
                                   double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline std::vector<int> uniform_ints(std::uint64_t seed, std::size_t n, int lo,
                                     int hi) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(lo, hi);
  std::vector<int> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Scalar references
// ---------------------------------------------------------------------------

// Temperature softmax of one row via the naive formula (no max subtraction);
// the library uses a different algorithm, which keeps this check independent.
inline std::vector<double> softmax_row(const std::vector<double>& z, double T) {
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    p[j] = std::exp(z[j] / T);
    s += p[j];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) s += p[j] * std::log(p[j] / q[j]);
  }
  return s;
}

// Mean negative log-likelihood of labels under row-wise softmax of logits.
inline double cross_entropy(const std::vector<double>& logits,
                            const std::vector<int>& labels, int classes) {
  const std::size_t batch = labels.size();
  double s = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<double> row(logits.begin() + i * classes,
                            logits.begin() + (i + 1) * classes);
    s += -std::log(softmax_row(row, 1.0)[static_cast<std::size_t>(labels[i])]);
  }
  return s / static_cast<double>(batch);
}

// Distillation loss: T^2 * batch-mean KL between temperature-softened rows.
// Default direction measures teacher-relative-to-student; reverse swaps them.
inline double distill(const std::vector<double>& teacher_logits,
                      const std::vector<double>& student_logits, int classes,
                      double T, bool reverse = false) {
  const std::size_t batch = teacher_logits.size() / static_cast<std::size_t>(classes);
  double s = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<double> trow(teacher_logits.begin() + i * classes,
                             teacher_logits.begin() + (i + 1) * classes);
    std::vector<double> srow(student_logits.begin() + i * classes,
                             student_logits.begin() + (i + 1) * classes);
    const auto pt = softmax_row(trow, T);
    const auto ps = softmax_row(srow, T);
    s += reverse ? kl(ps, pt) : kl(pt, ps);
  }
  return T * T * s / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// Convolution reference: im2col + Eigen matrix product, a different algorithm
// from the library's direct loops.
// ---------------------------------------------------------------------------

inline std::vector<double> conv2d(const std::vector<double>& x, int B, int Ci,
                                  int H, int W, const std::vector<double>& w,
                                  int Co, int k, const std::vector<double>& b,
                                  int stride) {
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  Eigen::MatrixXd kmat(Co, Ci * k * k);
  for (int oc = 0; oc < Co; ++oc) {
    for (int i = 0; i < Ci * k * k; ++i) kmat(oc, i) = w[oc * Ci * k * k + i];
  }
  std::vector<double> out(static_cast<std::size_t>(B) * Co * Ho * Wo);
  for (int n = 0; n < B; ++n) {
    Eigen::MatrixXd cols(Ci * k * k, Ho * Wo);
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int r = 0;
        for (int c = 0; c < Ci; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++r) {
              cols(r, oy * Wo + ox) =
                  x[((static_cast<std::size_t>(n) * Ci + c) * H + oy * stride + ky) * W +
                    ox * stride + kx];
            }
          }
        }
      }
    }
    const Eigen::MatrixXd res = kmat * cols;
    for (int oc = 0; oc < Co; ++oc) {
      for (int s = 0; s < Ho * Wo; ++s) {
        out[(static_cast<std::size_t>(n) * Co + oc) * Ho * Wo + s] = res(oc, s) + b[oc];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central-difference check of d(loss)/d(param) for every element of every
// listed parameter. build() must construct the scalar loss from the current
// parameter values; it is called once on a fresh tape for the analytic
// gradients and twice per element for the differences.
inline double max_grad_rel_err(const std::function<kd::Tensor(kd::Tape*)>& build,
                               const std::vector<kd::Tensor>& params,
                               double h = 1e-5) {
  for (const auto& p : params) p.zero_grad();
  kd::Tape tape;
  kd::Tensor loss = build(&tape);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.emplace_back(p.grad().data(), p.grad().data() + p.numel());
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    for (kd::Index i = 0; i < p.numel(); ++i) {
      const double orig = p.values()(i);
      p.values()(i) = orig + h;
      const double fp = build(nullptr).item();
      p.values()(i) = orig - h;
      const double fm = build(nullptr).item();
      p.values()(i) = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][static_cast<std::size_t>(i)];
      const double err =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      if (err > worst) worst = err;
    }
  }
  return worst;
}

}  // namespace oracle
