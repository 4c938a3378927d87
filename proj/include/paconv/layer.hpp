#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "paconv/costmodel.hpp"
#include "paconv/error.hpp"
#include "paconv/exec.hpp"
#include "paconv/geometry.hpp"
#include "paconv/modes.hpp"
#include "paconv/scorenet.hpp"
#include "paconv/weight_bank.hpp"

namespace paconv {

// One position-adaptive convolution layer: a ScoreNet assigns each
// (center, neighbor) pair a score per bank matrix, the scores blend the bank
// into a per-pair kernel, and transformed neighbor features are aggregated
// into the center's output row.
template <class Real>
struct PAConvLayer {
  WeightBank<Real> bank;
  ScoreNet<Real> scorenet;
  AggMode agg = AggMode::kMax;
  RelationMode relation = RelationMode::kFull7;
  bool zero_absolute = false;

  std::size_t c_in() const { return bank.c_in; }
  std::size_t c_out() const { return bank.c_out; }
  std::size_t m() const { return bank.m; }
};

template <class Real>
PAConvLayer<Real> paconv_layer_init(std::size_t c_in, std::size_t c_out,
                                    std::size_t m,
                                    const std::vector<std::size_t>& hidden,
                                    NormMode norm, AggMode agg,
                                    RelationMode relation, std::uint64_t seed) {
  PAConvLayer<Real> layer;
  layer.bank = weight_bank_init<Real>(m, c_in, c_out, mix_seed(seed, 0x5eed));
  layer.scorenet = scorenet_init<Real>(relation_d_in(relation), hidden, m,
                                       norm, mix_seed(seed, 0x5c07));
  layer.agg = agg;
  layer.relation = relation;
  return layer;
}

// Reduces k rows of width c into one row. MAX records, per channel, the
// neighbor slot attaining the maximum (ties keep the lowest slot) so the
// backward pass can route gradients.
template <class Real>
void aggregate(const Real* values, std::size_t k, std::size_t c, AggMode mode,
               Real* out, std::uint32_t* argmax = nullptr) {
  if (k == 0) throw SizeError("aggregate: empty neighborhood");
  switch (mode) {
    case AggMode::kMax:
      for (std::size_t ch = 0; ch < c; ++ch) {
        Real best = values[ch];
        std::uint32_t at = 0;
        for (std::size_t j = 1; j < k; ++j) {
          const Real v = values[j * c + ch];
          if (v > best) {
            best = v;
            at = static_cast<std::uint32_t>(j);
          }
        }
        out[ch] = best;
        if (argmax) argmax[ch] = at;
      }
      break;
    case AggMode::kSum:
    case AggMode::kAvg: {
      for (std::size_t ch = 0; ch < c; ++ch) out[ch] = Real(0);
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += values[j * c + ch];
      if (mode == AggMode::kAvg) {
        const Real inv = Real(1) / static_cast<Real>(k);
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] *= inv;
      }
      break;
    }
  }
}

// Everything the backward pass needs, owned by value so the cache stays valid
// independently of the inputs it was built from.
template <class Real>
struct ForwardCache {
  ForwardPath path = ForwardPath::kNaive;
  std::size_t n = 0, k = 0, c_in = 0, c_out = 0, m = 0;
  AggMode agg = AggMode::kMax;
  NormMode norm = NormMode::kSoftmax;

  NeighborIndex nbrs;
  std::vector<Real> features;             // n x c_in
  RelationTensor<Real> rel;               // n x k x d_in
  std::vector<std::vector<Real>> hidden;  // ScoreNet post-rectifier rows
  std::vector<Real> logits;               // n x k x m
  std::vector<Real> scores;               // n x k x m
  std::vector<Real> transformed;          // fused: n x m x c_out
  std::vector<Real> kernels;              // naive: n x k x c_in x c_out
  std::vector<std::uint32_t> argmax;      // MAX aggregation: n x c_out
};

template <class Real>
struct LayerForward {
  std::vector<Real> out;  // n x c_out
  ForwardCache<Real> cache;
};

namespace detail {

template <class Real>
void check_forward_inputs(const PAConvLayer<Real>& layer,
                          const PointCloud<Real>& cloud,
                          const NeighborIndex& nbrs) {
  if (!cloud.has_features())
    throw InputError("paconv forward: cloud has no features");
  if (cloud.c_in != layer.c_in())
    throw InputError("paconv forward: cloud features have width " +
                     std::to_string(cloud.c_in) + ", layer expects " +
                     std::to_string(layer.c_in()));
  if (nbrs.n != cloud.n)
    throw InputError("paconv forward: neighbor table has " +
                     std::to_string(nbrs.n) + " rows, cloud has " +
                     std::to_string(cloud.n));
  if (layer.scorenet.m != layer.bank.m)
    throw ContractError("paconv forward: ScoreNet emits " +
                        std::to_string(layer.scorenet.m) +
                        " scores, bank holds " + std::to_string(layer.bank.m));
  if (layer.scorenet.d_in != relation_d_in(layer.relation))
    throw ContractError("paconv forward: ScoreNet d_in " +
                        std::to_string(layer.scorenet.d_in) +
                        " does not match relation mode " +
                        to_string(layer.relation));
}

template <class Real>
void seed_cache(ForwardCache<Real>& cache, ForwardPath path,
                const PAConvLayer<Real>& layer, const PointCloud<Real>& cloud,
                const NeighborIndex& nbrs, RelationTensor<Real>&& rel,
                ScoreForward<Real>&& sf) {
  cache.path = path;
  cache.n = cloud.n;
  cache.k = nbrs.k;
  cache.c_in = layer.c_in();
  cache.c_out = layer.c_out();
  cache.m = layer.m();
  cache.agg = layer.agg;
  cache.norm = layer.scorenet.norm;
  cache.nbrs = nbrs;
  cache.features = cloud.features;
  cache.rel = std::move(rel);
  cache.hidden = std::move(sf.hidden);
  cache.logits = std::move(sf.logits);
  cache.scores = std::move(sf.scores);
  if (layer.agg == AggMode::kMax) cache.argmax.resize(cache.n * cache.c_out);
}

}  // namespace detail

// Reference path: materializes the per-pair kernel tensor (n*k*c_in*c_out)
// and the per-neighbor value tensor (n*k*c_out) before aggregating.
template <class Real>
LayerForward<Real> paconv_forward_naive(const PAConvLayer<Real>& layer,
                                        const PointCloud<Real>& cloud,
                                        const NeighborIndex& nbrs,
                                        CostCounter* counter = nullptr) {
  detail::check_forward_inputs(layer, cloud, nbrs);
  RelationTensor<Real> rel =
      relation_features(cloud, nbrs, layer.relation, layer.zero_absolute);
  ScoreForward<Real> sf = scorenet_forward(layer.scorenet, rel, counter);

  const std::size_t n = cloud.n, k = nbrs.k;
  const std::size_t c_in = layer.c_in(), c_out = layer.c_out(), m = layer.m();
  const std::size_t ksz = c_in * c_out;

  LayerForward<Real> fw;
  detail::seed_cache(fw.cache, ForwardPath::kNaive, layer, cloud, nbrs,
                     std::move(rel), std::move(sf));
  fw.cache.kernels.resize(n * k * ksz);
  fw.out.resize(n * c_out);
  std::vector<Real> values(n * k * c_out);

  auto run = [&](std::size_t lo, std::size_t hi, CostCounter* cc) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pair = i * k + j;
        Real* kern = fw.cache.kernels.data() + pair * ksz;
        assemble_kernel(layer.bank, fw.cache.scores.data() + pair * m, m,
                        kern);
        if (cc) cc->madds += m * ksz;
        const Real* f = cloud.feature(fw.cache.nbrs.at(i, j));
        Real* v = values.data() + pair * c_out;
        for (std::size_t c = 0; c < c_out; ++c) v[c] = Real(0);
        for (std::size_t a = 0; a < c_in; ++a) {
          const Real fa = f[a];
          const Real* krow = kern + a * c_out;
          for (std::size_t c = 0; c < c_out; ++c) v[c] += fa * krow[c];
        }
        if (cc) cc->madds += ksz;
      }
      aggregate(values.data() + i * k * c_out, k, c_out, layer.agg,
                fw.out.data() + i * c_out,
                layer.agg == AggMode::kMax
                    ? fw.cache.argmax.data() + i * c_out
                    : nullptr);
    }
  };

  if (counter) {
    run(0, n, counter);
  } else {
    parallel_for(n,
                 [&](std::size_t lo, std::size_t hi) { run(lo, hi, nullptr); });
  }
  return fw;
}

// Memory-lean path: transforms every point by all M matrices once, then
// gathers transformed rows per neighbor and blends them with scores,
// aggregating neighborhood by neighborhood. Never materializes any
// n*k*c_in*c_out tensor.
template <class Real>
LayerForward<Real> paconv_forward_fused(const PAConvLayer<Real>& layer,
                                        const PointCloud<Real>& cloud,
                                        const NeighborIndex& nbrs,
                                        CostCounter* counter = nullptr) {
  detail::check_forward_inputs(layer, cloud, nbrs);
  RelationTensor<Real> rel =
      relation_features(cloud, nbrs, layer.relation, layer.zero_absolute);
  ScoreForward<Real> sf = scorenet_forward(layer.scorenet, rel, counter);

  const std::size_t n = cloud.n, k = nbrs.k;
  const std::size_t c_in = layer.c_in(), c_out = layer.c_out(), m = layer.m();

  LayerForward<Real> fw;
  detail::seed_cache(fw.cache, ForwardPath::kFused, layer, cloud, nbrs,
                     std::move(rel), std::move(sf));
  fw.cache.transformed.assign(n * m * c_out, Real(0));
  fw.out.resize(n * c_out);
  std::vector<Real>& t = fw.cache.transformed;

  auto transform = [&](std::size_t lo, std::size_t hi, CostCounter* cc) {
    for (std::size_t p = lo; p < hi; ++p) {
      const Real* f = cloud.feature(p);
      for (std::size_t mm = 0; mm < m; ++mm) {
        const Real* b = layer.bank.matrix(mm);
        Real* tr = t.data() + (p * m + mm) * c_out;
        for (std::size_t a = 0; a < c_in; ++a) {
          const Real fa = f[a];
          const Real* brow = b + a * c_out;
          for (std::size_t c = 0; c < c_out; ++c) tr[c] += fa * brow[c];
        }
      }
      if (cc) cc->madds += m * c_in * c_out;
    }
  };

  auto assemble = [&](std::size_t lo, std::size_t hi, CostCounter* cc) {
    std::vector<Real> values(k * c_out);
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pair = i * k + j;
        const Real* srow = fw.cache.scores.data() + pair * m;
        const Real* tp = t.data() + fw.cache.nbrs.at(i, j) * m * c_out;
        Real* v = values.data() + j * c_out;
        for (std::size_t c = 0; c < c_out; ++c) v[c] = Real(0);
        for (std::size_t mm = 0; mm < m; ++mm) {
          const Real s = srow[mm];
          const Real* tr = tp + mm * c_out;
          for (std::size_t c = 0; c < c_out; ++c) v[c] += s * tr[c];
        }
        if (cc) cc->madds += m * c_out;
      }
      aggregate(values.data(), k, c_out, layer.agg, fw.out.data() + i * c_out,
                layer.agg == AggMode::kMax
                    ? fw.cache.argmax.data() + i * c_out
                    : nullptr);
    }
  };

  if (counter) {
    transform(0, n, counter);
    assemble(0, n, counter);
  } else {
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
      transform(lo, hi, nullptr);
    });
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
      assemble(lo, hi, nullptr);
    });
  }
  return fw;
}

template <class Real>
LayerForward<Real> paconv_forward(const PAConvLayer<Real>& layer,
                                  const PointCloud<Real>& cloud,
                                  const NeighborIndex& nbrs, ForwardPath path,
                                  CostCounter* counter = nullptr) {
  return path == ForwardPath::kNaive
             ? paconv_forward_naive(layer, cloud, nbrs, counter)
             : paconv_forward_fused(layer, cloud, nbrs, counter);
}

}  // namespace paconv
