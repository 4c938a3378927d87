#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "paconv/error.hpp"
#include "paconv/rng.hpp"

namespace paconv {

// Bank of M weight matrices, each c_in x c_out row-major, stored contiguously.
template <class Real>
struct WeightBank {
  std::vector<Real> values;
  std::size_t m = 0;
  std::size_t c_in = 0;
  std::size_t c_out = 0;

  std::size_t matrix_size() const { return c_in * c_out; }
  Real* matrix(std::size_t i) { return values.data() + i * matrix_size(); }
  const Real* matrix(std::size_t i) const {
    return values.data() + i * matrix_size();
  }
};

// Seeded i.i.d. uniform init on [-s, s] with s = sqrt(6 / (c_in + c_out)).
// Draw order is fixed: matrices in index order, row-major within each.
template <class Real>
WeightBank<Real> weight_bank_init(std::size_t m, std::size_t c_in,
                                  std::size_t c_out, std::uint64_t seed) {
  if (m < 1 || c_in < 1 || c_out < 1)
    throw SizeError("weight_bank_init: m, c_in, c_out must all be at least 1");
  WeightBank<Real> bank;
  bank.m = m;
  bank.c_in = c_in;
  bank.c_out = c_out;
  bank.values.resize(m * c_in * c_out);
  const double s = std::sqrt(6.0 / static_cast<double>(c_in + c_out));
  Rng rng(seed);
  for (Real& v : bank.values) v = static_cast<Real>(rng.uniform(-s, s));
  return bank;
}

// K = sum_m scores[m] * B_m, written into out (c_in x c_out row-major).
template <class Real>
void assemble_kernel(const WeightBank<Real>& bank, const Real* scores,
                     std::size_t n_scores, Real* out) {
  if (n_scores != bank.m)
    throw SizeError("assemble_kernel: got " + std::to_string(n_scores) +
                    " scores for a bank of " + std::to_string(bank.m));
  const std::size_t sz = bank.matrix_size();
  for (std::size_t i = 0; i < sz; ++i) out[i] = Real(0);
  for (std::size_t mm = 0; mm < bank.m; ++mm) {
    const Real s = scores[mm];
    const Real* b = bank.matrix(mm);
    for (std::size_t i = 0; i < sz; ++i) out[i] += s * b[i];
  }
}

}  // namespace paconv
