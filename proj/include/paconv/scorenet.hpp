#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "paconv/costmodel.hpp"
#include "paconv/error.hpp"
#include "paconv/exec.hpp"
#include "paconv/geometry.hpp"
#include "paconv/modes.hpp"
#include "paconv/rng.hpp"

namespace paconv {

// One affine map y = W x + b with W stored out x in row-major.
template <class Real>
struct AffineLayer {
  std::vector<Real> w;
  std::vector<Real> b;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Small MLP scoring each (center, neighbor) relation vector against the M
// weight matrices. Rectifier between affine layers, nothing after the last
// one; the raw outputs then go through normalize_scores. No batch norm.
template <class Real>
struct ScoreNet {
  std::vector<AffineLayer<Real>> layers;
  NormMode norm = NormMode::kSoftmax;
  std::size_t d_in = 0;
  std::size_t m = 0;

  std::vector<std::size_t> hidden_dims() const {
    std::vector<std::size_t> h;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
      h.push_back(layers[l].out);
    return h;
  }
};

template <class Real>
ScoreNet<Real> scorenet_init(std::size_t d_in,
                             const std::vector<std::size_t>& hidden,
                             std::size_t m, NormMode norm, std::uint64_t seed) {
  if (d_in < 1 || m < 1)
    throw SizeError("scorenet_init: d_in and m must be at least 1");
  for (const std::size_t h : hidden)
    if (h < 1) throw SizeError("scorenet_init: hidden width must be at least 1");
  ScoreNet<Real> net;
  net.d_in = d_in;
  net.m = m;
  net.norm = norm;
  std::vector<std::size_t> dims;
  dims.push_back(d_in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(m);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    AffineLayer<Real> a;
    a.in = dims[l];
    a.out = dims[l + 1];
    a.w.resize(a.in * a.out);
    a.b.assign(a.out, Real(0));
    const double s = std::sqrt(6.0 / static_cast<double>(a.in + a.out));
    Rng rng(mix_seed(seed, l));
    for (Real& v : a.w) v = static_cast<Real>(rng.uniform(-s, s));
    net.layers.push_back(std::move(a));
  }
  return net;
}

// Normalizes one logit row of width m into scores, in place allowed.
//   softmax       max-subtracted, rows sum to 1, entries in (0, 1)
//   sigmoid       elementwise 1 / (1 + exp(-x)), entries in (0, 1)
//   tanh_clamped  max(0, tanh(x)), entries in [0, 1)
//   none          identity
template <class Real>
void normalize_score_row(const Real* logits, std::size_t m, NormMode mode,
                         Real* out) {
  switch (mode) {
    case NormMode::kSoftmax: {
      Real mx = logits[0];
      for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, logits[i]);
      Real sum = Real(0);
      for (std::size_t i = 0; i < m; ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
      }
      const Real inv = Real(1) / sum;
      for (std::size_t i = 0; i < m; ++i) out[i] *= inv;
      break;
    }
    case NormMode::kSigmoid:
      for (std::size_t i = 0; i < m; ++i)
        out[i] = Real(1) / (Real(1) + std::exp(-logits[i]));
      break;
    case NormMode::kTanhClamped:
      for (std::size_t i = 0; i < m; ++i)
        out[i] = std::max(Real(0), std::tanh(logits[i]));
      break;
    case NormMode::kNone:
      for (std::size_t i = 0; i < m; ++i) out[i] = logits[i];
      break;
  }
}

template <class Real>
std::vector<Real> normalize_scores(const std::vector<Real>& logits,
                                   std::size_t m, NormMode mode) {
  if (m < 1 || logits.size() % m != 0)
    throw SizeError("normalize_scores: logit buffer is not rows x m");
  std::vector<Real> out(logits.size());
  const std::size_t rows = logits.size() / m;
  for (std::size_t r = 0; r < rows; ++r)
    normalize_score_row(logits.data() + r * m, m, mode, out.data() + r * m);
  return out;
}

// Forward pass products kept around for the backward pass.
template <class Real>
struct ScoreForward {
  std::vector<std::vector<Real>> hidden;  // post-rectifier, rows x width each
  std::vector<Real> logits;               // rows x m
  std::vector<Real> scores;               // rows x m
  std::size_t rows = 0;
  std::size_t m = 0;
};

// Evaluates the net on every relation row. With a counter attached the pass
// runs single-threaded and tallies affine multiply-adds.
template <class Real>
ScoreForward<Real> scorenet_forward(const ScoreNet<Real>& net,
                                    const RelationTensor<Real>& rel,
                                    CostCounter* counter = nullptr) {
  if (rel.d_in != net.d_in)
    throw InputError("scorenet_forward: relation width " +
                     std::to_string(rel.d_in) + " does not match net d_in " +
                     std::to_string(net.d_in));
  const std::size_t rows = rel.n * rel.k;
  const std::size_t n_layers = net.layers.size();

  ScoreForward<Real> sf;
  sf.rows = rows;
  sf.m = net.m;
  sf.hidden.resize(n_layers > 0 ? n_layers - 1 : 0);
  for (std::size_t l = 0; l + 1 < n_layers; ++l)
    sf.hidden[l].resize(rows * net.layers[l].out);
  sf.logits.resize(rows * net.m);
  sf.scores.resize(rows * net.m);

  auto run_rows = [&](std::size_t lo, std::size_t hi, CostCounter* cc) {
    for (std::size_t r = lo; r < hi; ++r) {
      const Real* x = rel.values.data() + r * rel.d_in;
      for (std::size_t l = 0; l < n_layers; ++l) {
        const AffineLayer<Real>& a = net.layers[l];
        const bool last = (l + 1 == n_layers);
        Real* y = last ? sf.logits.data() + r * net.m
                       : sf.hidden[l].data() + r * a.out;
        for (std::size_t o = 0; o < a.out; ++o) {
          Real acc = a.b[o];
          const Real* wrow = a.w.data() + o * a.in;
          for (std::size_t i = 0; i < a.in; ++i) acc += wrow[i] * x[i];
          y[o] = last ? acc : std::max(Real(0), acc);
        }
        if (cc) cc->madds += a.in * a.out;
        x = y;
      }
      normalize_score_row(sf.logits.data() + r * net.m, net.m, net.norm,
                          sf.scores.data() + r * net.m);
    }
  };

  if (counter) {
    run_rows(0, rows, counter);
  } else {
    parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
      run_rows(lo, hi, nullptr);
    });
  }
  return sf;
}

}  // namespace paconv
