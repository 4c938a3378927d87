#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "paconv/error.hpp"
#include "paconv/weight_bank.hpp"

namespace paconv {

namespace detail {

template <class Real>
double frob_dot(const Real* a, const Real* b, std::size_t sz) {
  double acc = 0.0;
  for (std::size_t i = 0; i < sz; ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace detail

// Pairwise correlation penalty pushing bank matrices apart:
//
//   L = sum_{i<j} |<B_i, B_j>| / (|B_i| |B_j|)
//
// with Frobenius inner products and norms over unordered pairs. Zero-norm
// matrices contribute nothing to their pairs; if any matrix is zero-norm the
// optional degenerate flag is set.
template <class Real>
double corr_loss(const WeightBank<Real>& bank, bool* degenerate = nullptr) {
  const std::size_t m = bank.m, sz = bank.matrix_size();
  std::vector<double> norms(m);
  bool degen = false;
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = std::sqrt(detail::frob_dot(bank.matrix(i), bank.matrix(i), sz));
    if (norms[i] == 0.0) degen = true;
  }
  if (degenerate) *degenerate = degen;
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      loss += std::abs(detail::frob_dot(bank.matrix(i), bank.matrix(j), sz)) /
              (norms[i] * norms[j]);
    }
  return loss;
}

// Gradient of corr_loss, same layout as bank.values. At the |.| kink
// (<B_i, B_j> exactly 0) the subgradient 0 is used; zero-norm matrices get a
// zero gradient. A bank with a single matrix has no pairs, hence zero.
template <class Real>
std::vector<Real> corr_loss_grad(const WeightBank<Real>& bank) {
  const std::size_t m = bank.m, sz = bank.matrix_size();
  std::vector<Real> grad(bank.values.size(), Real(0));
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i)
    norms[i] = std::sqrt(detail::frob_dot(bank.matrix(i), bank.matrix(i), sz));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      const double d = detail::frob_dot(bank.matrix(i), bank.matrix(j), sz);
      if (d == 0.0) continue;
      const double sign = d > 0.0 ? 1.0 : -1.0;
      const double inv_ninj = 1.0 / (norms[i] * norms[j]);
      const double c = std::abs(d) * inv_ninj;
      const Real* bi = bank.matrix(i);
      const Real* bj = bank.matrix(j);
      Real* gi = grad.data() + i * sz;
      Real* gj = grad.data() + j * sz;
      const double ci = c / (norms[i] * norms[i]);
      const double cj = c / (norms[j] * norms[j]);
      for (std::size_t q = 0; q < sz; ++q) {
        gi[q] += static_cast<Real>(sign * inv_ninj * bj[q] - ci * bi[q]);
        gj[q] += static_cast<Real>(sign * inv_ninj * bi[q] - cj * bj[q]);
      }
    }
  return grad;
}

// Diversity diagnostics over a bank: the correlation loss plus the pairwise
// Pearson correlation matrix of the flattened matrices.
template <class Real>
struct CorrReport {
  double loss = 0.0;
  std::vector<double> pearson;  // m x m, diagonal 1
  double mean_r = 0.0;          // signed mean over off-diagonal pairs
  double mean_abs_r = 0.0;
  bool degenerate = false;
};

// Pearson's R between every pair of flattened matrices, computed from
// single-pass sums. Constant (zero-variance) matrices yield R = 0 for their
// pairs and set the degenerate flag.
template <class Real>
CorrReport<Real> pearson_r_pairs(const WeightBank<Real>& bank) {
  const std::size_t m = bank.m, sz = bank.matrix_size();
  CorrReport<Real> rep;
  rep.loss = corr_loss(bank, &rep.degenerate);
  rep.pearson.assign(m * m, 0.0);

  std::vector<double> sums(m, 0.0), sqsums(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* b = bank.matrix(i);
    for (std::size_t q = 0; q < sz; ++q) {
      const double v = static_cast<double>(b[q]);
      sums[i] += v;
      sqsums[i] += v * v;
    }
  }
  const double nd = static_cast<double>(sz);
  double acc_r = 0.0, acc_abs = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    rep.pearson[i * m + i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      const double dot = detail::frob_dot(bank.matrix(i), bank.matrix(j), sz);
      const double cov = dot - sums[i] * sums[j] / nd;
      const double var_i = sqsums[i] - sums[i] * sums[i] / nd;
      const double var_j = sqsums[j] - sums[j] * sums[j] / nd;
      double r = 0.0;
      if (var_i > 0.0 && var_j > 0.0) {
        r = cov / std::sqrt(var_i * var_j);
        r = std::min(1.0, std::max(-1.0, r));
      } else {
        rep.degenerate = true;
      }
      rep.pearson[i * m + j] = r;
      rep.pearson[j * m + i] = r;
      acc_r += r;
      acc_abs += std::abs(r);
      ++pairs;
    }
  }
  if (pairs > 0) {
    rep.mean_r = acc_r / static_cast<double>(pairs);
    rep.mean_abs_r = acc_abs / static_cast<double>(pairs);
  }
  return rep;
}

struct CorrStep {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_abs_r = 0.0;
};

// Plain gradient descent on corr_loss alone. The returned history holds one
// entry per step boundary: entry s is the state before step s, the final
// entry the state after the last step.
template <class Real>
std::vector<CorrStep> corr_descent(WeightBank<Real>& bank, std::size_t steps,
                                   double lr) {
  std::vector<CorrStep> history;
  history.reserve(steps + 1);
  for (std::size_t s = 0; s <= steps; ++s) {
    const CorrReport<Real> rep = pearson_r_pairs(bank);
    history.push_back({s, rep.loss, rep.mean_abs_r});
    if (s == steps) break;
    const std::vector<Real> g = corr_loss_grad(bank);
    for (std::size_t q = 0; q < bank.values.size(); ++q)
      bank.values[q] -= static_cast<Real>(lr) * g[q];
  }
  return history;
}

}  // namespace paconv
