#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "paconv/error.hpp"
#include "paconv/layer.hpp"
#include "paconv/modes.hpp"

namespace paconv {

template <class Real>
struct AffineGrad {
  std::vector<Real> dw;
  std::vector<Real> db;
};

// Gradients of a scalar loss with respect to every layer parameter block and
// the input features.
template <class Real>
struct GradientBundle {
  std::vector<Real> d_features;              // n x c_in
  std::vector<Real> d_bank;                  // m x c_in x c_out
  std::vector<AffineGrad<Real>> d_scorenet;  // one entry per affine layer
};

namespace detail {

// d_out (n x c_out) -> d_values (n x k x c_out) through the aggregation.
// MAX routes each channel's gradient to the recorded argmax slot; SUM
// broadcasts; AVG broadcasts scaled by 1/k.
template <class Real>
std::vector<Real> aggregate_backward(const ForwardCache<Real>& cache,
                                     const Real* d_out) {
  const std::size_t n = cache.n, k = cache.k, c = cache.c_out;
  std::vector<Real> d_values(n * k * c, Real(0));
  switch (cache.agg) {
    case AggMode::kMax:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::uint32_t j = cache.argmax[i * c + ch];
          d_values[(i * k + j) * c + ch] += d_out[i * c + ch];
        }
      break;
    case AggMode::kSum:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            d_values[(i * k + j) * c + ch] = d_out[i * c + ch];
      break;
    case AggMode::kAvg: {
      const Real inv = Real(1) / static_cast<Real>(k);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            d_values[(i * k + j) * c + ch] = d_out[i * c + ch] * inv;
      break;
    }
  }
  return d_values;
}

// d_scores -> d_logits, rowwise per normalization mode.
//   softmax       J = diag(s) - s s^T
//   sigmoid       s (1 - s)
//   tanh_clamped  1 - s^2 where the clamp is inactive (s > 0), else 0
//   none          identity
template <class Real>
std::vector<Real> normalize_backward(const ForwardCache<Real>& cache,
                                     const std::vector<Real>& d_scores) {
  const std::size_t rows = cache.n * cache.k, m = cache.m;
  std::vector<Real> d_logits(rows * m);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* s = cache.scores.data() + r * m;
    const Real* ds = d_scores.data() + r * m;
    Real* dl = d_logits.data() + r * m;
    switch (cache.norm) {
      case NormMode::kSoftmax: {
        Real dot = Real(0);
        for (std::size_t q = 0; q < m; ++q) dot += ds[q] * s[q];
        for (std::size_t q = 0; q < m; ++q) dl[q] = s[q] * (ds[q] - dot);
        break;
      }
      case NormMode::kSigmoid:
        for (std::size_t q = 0; q < m; ++q)
          dl[q] = ds[q] * s[q] * (Real(1) - s[q]);
        break;
      case NormMode::kTanhClamped:
        for (std::size_t q = 0; q < m; ++q)
          dl[q] = s[q] > Real(0) ? ds[q] * (Real(1) - s[q] * s[q]) : Real(0);
        break;
      case NormMode::kNone:
        for (std::size_t q = 0; q < m; ++q) dl[q] = ds[q];
        break;
    }
  }
  return d_logits;
}

// Standard affine-stack backprop over all relation rows. Rectifier masks are
// recovered from the cached post-activation values (active iff > 0). The
// gradient with respect to the relation input is not needed (positions are
// not trained) and is not propagated out of layer 0.
template <class Real>
void scorenet_backward(const ScoreNet<Real>& net,
                       const ForwardCache<Real>& cache,
                       const std::vector<Real>& d_logits,
                       std::vector<AffineGrad<Real>>& grads) {
  const std::size_t rows = cache.n * cache.k;
  const std::size_t n_layers = net.layers.size();
  grads.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    grads[l].dw.assign(net.layers[l].w.size(), Real(0));
    grads[l].db.assign(net.layers[l].b.size(), Real(0));
  }

  std::vector<Real> g, g_prev;
  for (std::size_t r = 0; r < rows; ++r) {
    g.assign(d_logits.begin() + r * net.m, d_logits.begin() + (r + 1) * net.m);
    for (std::size_t li = n_layers; li-- > 0;) {
      const AffineLayer<Real>& a = net.layers[li];
      const Real* x = li == 0 ? cache.rel.values.data() + r * cache.rel.d_in
                              : cache.hidden[li - 1].data() + r * a.in;
      AffineGrad<Real>& ag = grads[li];
      for (std::size_t o = 0; o < a.out; ++o) {
        const Real go = g[o];
        ag.db[o] += go;
        Real* dwrow = ag.dw.data() + o * a.in;
        for (std::size_t q = 0; q < a.in; ++q) dwrow[q] += go * x[q];
      }
      if (li == 0) break;
      g_prev.assign(a.in, Real(0));
      for (std::size_t o = 0; o < a.out; ++o) {
        const Real go = g[o];
        const Real* wrow = a.w.data() + o * a.in;
        for (std::size_t q = 0; q < a.in; ++q) g_prev[q] += wrow[q] * go;
      }
      for (std::size_t q = 0; q < a.in; ++q)
        if (!(x[q] > Real(0))) g_prev[q] = Real(0);
      g.swap(g_prev);
    }
  }
}

}  // namespace detail

// Reverse-mode gradients for one layer. The cache decides the route: the
// naive branch differentiates through the materialized per-pair kernels, the
// fused branch through the per-point transformed features. Both compute the
// same mathematical gradient.
template <class Real>
GradientBundle<Real> paconv_backward(const PAConvLayer<Real>& layer,
                                     const ForwardCache<Real>& cache,
                                     const std::vector<Real>& d_out) {
  if (cache.c_in != layer.c_in() || cache.c_out != layer.c_out() ||
      cache.m != layer.m() || cache.agg != layer.agg ||
      cache.norm != layer.scorenet.norm)
    throw ContractError("paconv_backward: cache does not match the layer");
  if (cache.path == ForwardPath::kNaive &&
      cache.kernels.size() != cache.n * cache.k * cache.c_in * cache.c_out)
    throw ContractError("paconv_backward: naive cache is missing kernels");
  if (cache.path == ForwardPath::kFused &&
      cache.transformed.size() != cache.n * cache.m * cache.c_out)
    throw ContractError(
        "paconv_backward: fused cache is missing transformed features");
  if (d_out.size() != cache.n * cache.c_out)
    throw SizeError("paconv_backward: d_out has " +
                    std::to_string(d_out.size()) + " values, expected " +
                    std::to_string(cache.n * cache.c_out));

  const std::size_t n = cache.n, k = cache.k, m = cache.m;
  const std::size_t c_in = cache.c_in, c_out = cache.c_out;
  const std::size_t ksz = c_in * c_out;

  GradientBundle<Real> gb;
  gb.d_features.assign(n * c_in, Real(0));
  gb.d_bank.assign(m * ksz, Real(0));

  const std::vector<Real> d_values =
      detail::aggregate_backward(cache, d_out.data());
  std::vector<Real> d_scores(n * k * m, Real(0));

  if (cache.path == ForwardPath::kNaive) {
    // v_ij = f_p K_ij with K_ij = sum_m s_m B_m, p = nbrs(i, j):
    //   d_f[p]     += K_ij dv
    //   d_B_m      += s_m (f_p outer dv)
    //   d_s[ij,m]   = f_p B_m . dv
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pair = i * k + j;
        const std::uint32_t p = cache.nbrs.at(i, j);
        const Real* dv = d_values.data() + pair * c_out;
        const Real* kern = cache.kernels.data() + pair * ksz;
        const Real* f = cache.features.data() + p * c_in;
        Real* df = gb.d_features.data() + p * c_in;
        for (std::size_t a = 0; a < c_in; ++a) {
          Real acc = Real(0);
          const Real* krow = kern + a * c_out;
          for (std::size_t c = 0; c < c_out; ++c) acc += krow[c] * dv[c];
          df[a] += acc;
        }
        const Real* srow = cache.scores.data() + pair * m;
        for (std::size_t mm = 0; mm < m; ++mm) {
          const Real s = srow[mm];
          const Real* b = layer.bank.matrix(mm);
          Real* db = gb.d_bank.data() + mm * ksz;
          Real ds = Real(0);
          for (std::size_t a = 0; a < c_in; ++a) {
            const Real fa = f[a];
            const Real* brow = b + a * c_out;
            Real* dbrow = db + a * c_out;
            for (std::size_t c = 0; c < c_out; ++c) {
              const Real fdv = fa * dv[c];
              ds += brow[c] * fdv;
              dbrow[c] += s * fdv;
            }
          }
          d_scores[pair * m + mm] = ds;
        }
      }
    }
  } else {
    // v_ij = sum_m s_m t[p][m] with t[p][m] = f_p B_m:
    //   d_s[ij,m]   = t[p][m] . dv
    //   d_t[p][m]  += s_m dv        (accumulated over all referencing pairs)
    //   d_f[p]      = sum_m B_m d_t[p][m]^T
    //   d_B_m       = sum_p f_p outer d_t[p][m]
    std::vector<Real> d_t(n * m * c_out, Real(0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pair = i * k + j;
        const std::uint32_t p = cache.nbrs.at(i, j);
        const Real* dv = d_values.data() + pair * c_out;
        const Real* srow = cache.scores.data() + pair * m;
        const Real* tp = cache.transformed.data() + p * m * c_out;
        Real* dtp = d_t.data() + p * m * c_out;
        for (std::size_t mm = 0; mm < m; ++mm) {
          const Real* tr = tp + mm * c_out;
          Real* dtr = dtp + mm * c_out;
          const Real s = srow[mm];
          Real ds = Real(0);
          for (std::size_t c = 0; c < c_out; ++c) {
            ds += tr[c] * dv[c];
            dtr[c] += s * dv[c];
          }
          d_scores[pair * m + mm] = ds;
        }
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      const Real* f = cache.features.data() + p * c_in;
      const Real* dtp = d_t.data() + p * m * c_out;
      Real* df = gb.d_features.data() + p * c_in;
      for (std::size_t mm = 0; mm < m; ++mm) {
        const Real* b = layer.bank.matrix(mm);
        const Real* dtr = dtp + mm * c_out;
        Real* db = gb.d_bank.data() + mm * ksz;
        for (std::size_t a = 0; a < c_in; ++a) {
          const Real* brow = b + a * c_out;
          Real* dbrow = db + a * c_out;
          const Real fa = f[a];
          Real acc = Real(0);
          for (std::size_t c = 0; c < c_out; ++c) {
            acc += brow[c] * dtr[c];
            dbrow[c] += fa * dtr[c];
          }
          df[a] += acc;
        }
      }
    }
  }

  const std::vector<Real> d_logits = detail::normalize_backward(cache, d_scores);
  detail::scorenet_backward(layer.scorenet, cache, d_logits, gb.d_scorenet);
  return gb;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

struct BlockCheck {
  std::string block;
  double max_rel_err = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;
};

struct GradCheckReport {
  double eps = 0.0;
  LossKind loss = LossKind::kSumSquares;
  ForwardPath path = ForwardPath::kNaive;
  NormMode norm = NormMode::kSoftmax;
  AggMode agg = AggMode::kMax;
  std::vector<BlockCheck> blocks;
  double max_rel_err = 0.0;
  std::size_t skipped_total = 0;

  bool passed(double tol) const { return max_rel_err < tol; }
};

namespace detail {

template <class Real>
double loss_value(const std::vector<Real>& out, LossKind loss) {
  double acc = 0.0;
  for (const Real v : out) {
    const double x = static_cast<double>(v);
    acc += loss == LossKind::kSum ? x : x * x;
  }
  return acc;
}

template <class Real>
std::vector<Real> loss_d_out(const std::vector<Real>& out, LossKind loss) {
  std::vector<Real> d(out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    d[i] = loss == LossKind::kSum ? Real(1) : Real(2) * out[i];
  return d;
}

}  // namespace detail

// Central-difference check of paconv_backward over every parameter block.
// Runs in double precision only. The forward map is piecewise smooth: MAX
// argmax slots, ScoreNet rectifier units and the tanh clamp all switch
// branches across measure-zero surfaces. A coordinate whose +eps and -eps
// forwards land on different branches is excluded from the error statistics,
// since no single subgradient can match a finite difference straddling a
// kink.
template <class Real>
GradCheckReport finite_diff_check(const PAConvLayer<Real>& layer,
                                  const PointCloud<Real>& cloud,
                                  const NeighborIndex& nbrs, LossKind loss,
                                  double eps = 1e-5,
                                  ForwardPath path = ForwardPath::kNaive) {
  if (!std::is_same_v<Real, double>)
    throw NumericalError(
        "finite_diff_check: requires double precision; rerun with "
        "precision=double");

  GradCheckReport report;
  report.eps = eps;
  report.loss = loss;
  report.path = path;
  report.norm = layer.scorenet.norm;
  report.agg = layer.agg;

  LayerForward<Real> base = paconv_forward(layer, cloud, nbrs, path);
  const GradientBundle<Real> analytic =
      paconv_backward(layer, base.cache, detail::loss_d_out(base.out, loss));

  PAConvLayer<Real> work_layer = layer;
  PointCloud<Real> work_cloud = cloud;

  // The layer is piecewise smooth: MAX argmax slots, ScoreNet rectifier
  // units and the tanh clamp each switch branches at measure-zero surfaces.
  // A perturbation that lands the +eps and -eps forwards on different
  // branches makes the central difference meaningless, so each evaluation
  // records its branch signature and mismatching coordinates are skipped.
  auto eval = [&](std::vector<std::uint8_t>* sig) {
    LayerForward<Real> fw = paconv_forward(work_layer, work_cloud, nbrs, path);
    if (sig) {
      sig->clear();
      if (layer.agg == AggMode::kMax)
        for (const std::uint32_t a : fw.cache.argmax) {
          sig->push_back(static_cast<std::uint8_t>(a & 0xff));
          sig->push_back(static_cast<std::uint8_t>(a >> 8));
        }
      for (const auto& h : fw.cache.hidden)
        for (const Real v : h) sig->push_back(v > Real(0) ? 1 : 0);
      if (layer.scorenet.norm == NormMode::kTanhClamped)
        for (const Real s : fw.cache.scores)
          sig->push_back(s > Real(0) ? 1 : 0);
    }
    const double l = detail::loss_value(fw.out, loss);
    if (!std::isfinite(l))
      throw NumericalError("finite_diff_check: non-finite loss");
    return l;
  };

  auto check_block = [&](const std::string& name, Real* params,
                         const Real* grads, std::size_t count) {
    BlockCheck bc;
    bc.block = name;
    std::vector<std::uint8_t> sig_hi, sig_lo;
    for (std::size_t q = 0; q < count; ++q) {
      const Real saved = params[q];
      params[q] = saved + static_cast<Real>(eps);
      double l_hi;
      try {
        l_hi = eval(&sig_hi);
      } catch (const NumericalError&) {
        params[q] = saved;
        throw NumericalError("finite_diff_check: non-finite loss perturbing " +
                             name + "[" + std::to_string(q) + "]");
      }
      params[q] = saved - static_cast<Real>(eps);
      double l_lo;
      try {
        l_lo = eval(&sig_lo);
      } catch (const NumericalError&) {
        params[q] = saved;
        throw NumericalError("finite_diff_check: non-finite loss perturbing " +
                             name + "[" + std::to_string(q) + "]");
      }
      params[q] = saved;
      if (sig_hi != sig_lo) {
        ++bc.skipped_nonsmooth;
        continue;
      }
      const double numeric = (l_hi - l_lo) / (2.0 * eps);
      const double an = static_cast<double>(grads[q]);
      const double rel = std::abs(an - numeric) /
                         std::max({std::abs(an), std::abs(numeric), 1e-8});
      ++bc.checked;
      if (rel > bc.max_rel_err) {
        bc.max_rel_err = rel;
        bc.analytic_at_worst = an;
        bc.numeric_at_worst = numeric;
        bc.worst_index = q;
      }
    }
    report.skipped_total += bc.skipped_nonsmooth;
    if (bc.max_rel_err > report.max_rel_err)
      report.max_rel_err = bc.max_rel_err;
    report.blocks.push_back(std::move(bc));
  };

  check_block("features", work_cloud.features.data(),
              analytic.d_features.data(), work_cloud.features.size());
  check_block("bank", work_layer.bank.values.data(), analytic.d_bank.data(),
              work_layer.bank.values.size());
  for (std::size_t l = 0; l < work_layer.scorenet.layers.size(); ++l) {
    check_block("scorenet.w" + std::to_string(l),
                work_layer.scorenet.layers[l].w.data(),
                analytic.d_scorenet[l].dw.data(),
                work_layer.scorenet.layers[l].w.size());
    check_block("scorenet.b" + std::to_string(l),
                work_layer.scorenet.layers[l].b.data(),
                analytic.d_scorenet[l].db.data(),
                work_layer.scorenet.layers[l].b.size());
  }
  return report;
}

}  // namespace paconv
