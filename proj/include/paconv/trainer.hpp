#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "paconv/autograd.hpp"
#include "paconv/error.hpp"
#include "paconv/geometry.hpp"
#include "paconv/layer.hpp"
#include "paconv/modes.hpp"
#include "paconv/regularize.hpp"
#include "paconv/rng.hpp"

namespace paconv {

// ---------------------------------------------------------------------------
// Synthetic three-class dataset: points sampled on a sphere, a cube surface,
// or a disc, each cloud centered and scaled into the unit ball.
// ---------------------------------------------------------------------------

template <class Real>
struct Sample {
  PointCloud<Real> cloud;
  int label = 0;
};

template <class Real>
struct SynthDataset {
  std::vector<Sample<Real>> samples;
  std::size_t n_per_class = 0;
  std::size_t n_points = 0;
  std::uint64_t seed = 0;
};

inline const char* class_name(int label) {
  switch (label) {
    case 0: return "sphere";
    case 1: return "cube";
    case 2: return "plane";
  }
  return "?";
}

namespace detail {

inline void unit_direction(Rng& rng, double out[3]) {
  double n2;
  do {
    out[0] = rng.normal();
    out[1] = rng.normal();
    out[2] = rng.normal();
    n2 = out[0] * out[0] + out[1] * out[1] + out[2] * out[2];
  } while (n2 < 1e-18);
  const double inv = 1.0 / std::sqrt(n2);
  out[0] *= inv;
  out[1] *= inv;
  out[2] *= inv;
}

template <class Real>
PointCloud<Real> synth_cloud(int label, std::size_t n_points, Rng& rng) {
  std::vector<double> xyz(n_points * 3);
  if (label == 0) {  // unit sphere surface
    for (std::size_t i = 0; i < n_points; ++i) unit_direction(rng, &xyz[3 * i]);
  } else if (label == 1) {  // surface of the cube [-1, 1]^3
    for (std::size_t i = 0; i < n_points; ++i) {
      const std::uint64_t face = rng.below(6);
      const std::size_t axis = face >> 1;
      double* p = &xyz[3 * i];
      p[axis] = (face & 1) ? 1.0 : -1.0;
      p[(axis + 1) % 3] = rng.uniform(-1.0, 1.0);
      p[(axis + 2) % 3] = rng.uniform(-1.0, 1.0);
    }
  } else {  // unit disc with a random orientation
    double nrm[3], e1[3], e2[3];
    unit_direction(rng, nrm);
    const std::size_t small =
        std::abs(nrm[0]) <= std::abs(nrm[1])
            ? (std::abs(nrm[0]) <= std::abs(nrm[2]) ? 0 : 2)
            : (std::abs(nrm[1]) <= std::abs(nrm[2]) ? 1 : 2);
    double axis[3] = {0, 0, 0};
    axis[small] = 1.0;
    e1[0] = nrm[1] * axis[2] - nrm[2] * axis[1];
    e1[1] = nrm[2] * axis[0] - nrm[0] * axis[2];
    e1[2] = nrm[0] * axis[1] - nrm[1] * axis[0];
    const double inv =
        1.0 / std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
    for (int a = 0; a < 3; ++a) e1[a] *= inv;
    e2[0] = nrm[1] * e1[2] - nrm[2] * e1[1];
    e2[1] = nrm[2] * e1[0] - nrm[0] * e1[2];
    e2[2] = nrm[0] * e1[1] - nrm[1] * e1[0];
    for (std::size_t i = 0; i < n_points; ++i) {
      const double r = std::sqrt(rng.uniform());
      const double phi = 6.283185307179586476925286766559 * rng.uniform();
      const double cu = r * std::cos(phi), cv = r * std::sin(phi);
      for (int a = 0; a < 3; ++a) xyz[3 * i + a] = cu * e1[a] + cv * e2[a];
    }
  }

  // Center on the centroid, then scale the farthest point onto the unit
  // sphere so every class lives in the same ball.
  double centroid[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n_points; ++i)
    for (int a = 0; a < 3; ++a) centroid[a] += xyz[3 * i + a];
  for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<double>(n_points);
  double max_r2 = 0.0;
  for (std::size_t i = 0; i < n_points; ++i) {
    for (int a = 0; a < 3; ++a) xyz[3 * i + a] -= centroid[a];
    const double r2 = xyz[3 * i] * xyz[3 * i] +
                      xyz[3 * i + 1] * xyz[3 * i + 1] +
                      xyz[3 * i + 2] * xyz[3 * i + 2];
    max_r2 = std::max(max_r2, r2);
  }
  if (max_r2 > 0.0) {
    const double inv = 1.0 / std::sqrt(max_r2);
    for (double& v : xyz) v *= inv;
  }

  std::vector<Real> coords(xyz.size());
  for (std::size_t i = 0; i < xyz.size(); ++i)
    coords[i] = static_cast<Real>(xyz[i]);
  return PointCloud<Real>::from_coords(std::move(coords));
}

}  // namespace detail

template <class Real>
SynthDataset<Real> synth_dataset(std::size_t n_per_class, std::size_t n_points,
                                 std::uint64_t seed) {
  if (n_per_class < 1)
    throw SizeError("synth_dataset: n_per_class must be at least 1");
  if (n_points < 16)
    throw SizeError("synth_dataset: n_points must be at least 16");
  SynthDataset<Real> ds;
  ds.n_per_class = n_per_class;
  ds.n_points = n_points;
  ds.seed = seed;
  Rng rng(seed);
  for (int label = 0; label < 3; ++label)
    for (std::size_t s = 0; s < n_per_class; ++s)
      ds.samples.push_back(
          {detail::synth_cloud<Real>(label, n_points, rng), label});
  return ds;
}

// ---------------------------------------------------------------------------
// Input transforms for robustness evaluation.
// ---------------------------------------------------------------------------

enum class TransformKind { kPermute, kRotateZ, kTranslate, kScale, kJitter };

struct Transform {
  TransformKind kind = TransformKind::kPermute;
  double amount = 0.0;  // degrees / offset / factor / sigma
  std::uint64_t seed = 0;

  std::string name() const {
    switch (kind) {
      case TransformKind::kPermute: return "permute";
      case TransformKind::kRotateZ:
        return "rotate_z:" + std::to_string(static_cast<int>(amount));
      case TransformKind::kTranslate: {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "translate:%g", amount);
        return buf;
      }
      case TransformKind::kScale: {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "scale:%g", amount);
        return buf;
      }
      case TransformKind::kJitter: {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "jitter:%g", amount);
        return buf;
      }
    }
    return "?";
  }
};

// "permute" | "rotate_z:90" | "translate:0.2" | "scale:0.8" | "jitter:0.01"
inline Transform parse_transform(const std::string& spec,
                                 std::uint64_t seed = 0) {
  Transform t;
  t.seed = seed;
  const std::size_t colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  const std::string arg =
      colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto need_arg = [&]() {
    if (arg.empty())
      throw InputError("transform '" + head + "' needs a numeric argument");
    try {
      return std::stod(arg);
    } catch (const std::exception&) {
      throw InputError("transform '" + spec + "': bad numeric argument");
    }
  };
  if (head == "permute") {
    t.kind = TransformKind::kPermute;
  } else if (head == "rotate_z") {
    t.kind = TransformKind::kRotateZ;
    t.amount = need_arg();
  } else if (head == "translate") {
    t.kind = TransformKind::kTranslate;
    t.amount = need_arg();
  } else if (head == "scale") {
    t.kind = TransformKind::kScale;
    t.amount = need_arg();
  } else if (head == "jitter") {
    t.kind = TransformKind::kJitter;
    t.amount = need_arg();
  } else {
    throw InputError("unknown transform: " + spec);
  }
  return t;
}

template <class Real>
PointCloud<Real> apply_transform(const PointCloud<Real>& cloud,
                                 const Transform& t) {
  PointCloud<Real> out = cloud;
  switch (t.kind) {
    case TransformKind::kPermute: {
      std::vector<std::uint32_t> perm(cloud.n);
      for (std::size_t i = 0; i < cloud.n; ++i)
        perm[i] = static_cast<std::uint32_t>(i);
      Rng rng(t.seed);
      rng.shuffle(perm);
      for (std::size_t i = 0; i < cloud.n; ++i) {
        for (int a = 0; a < 3; ++a)
          out.coords[3 * i + a] = cloud.coords[3 * perm[i] + a];
        for (std::size_t c = 0; c < cloud.c_in; ++c)
          out.features[i * cloud.c_in + c] =
              cloud.features[perm[i] * cloud.c_in + c];
      }
      break;
    }
    case TransformKind::kRotateZ: {
      const int deg = static_cast<int>(t.amount);
      for (std::size_t i = 0; i < cloud.n; ++i) {
        Real* p = out.point(i);
        const Real x = p[0], y = p[1];
        if (deg == 90) {
          p[0] = -y;
          p[1] = x;
        } else if (deg == 180) {
          p[0] = -x;
          p[1] = -y;
        } else if (deg == 270) {
          p[0] = y;
          p[1] = -x;
        } else {
          const double rad = t.amount * 0.017453292519943295;
          const double cs = std::cos(rad), sn = std::sin(rad);
          p[0] = static_cast<Real>(cs * x - sn * y);
          p[1] = static_cast<Real>(sn * x + cs * y);
        }
      }
      break;
    }
    case TransformKind::kTranslate:
      // One shared offset on all three axes.
      for (Real& v : out.coords) v += static_cast<Real>(t.amount);
      break;
    case TransformKind::kScale:
      for (Real& v : out.coords) v *= static_cast<Real>(t.amount);
      break;
    case TransformKind::kJitter: {
      Rng rng(t.seed);
      for (Real& v : out.coords)
        v += static_cast<Real>(t.amount * rng.normal());
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy classifier: two position-adaptive convolution layers with a rectifier
// after each, a global MAX pool over points, and an affine head.
// ---------------------------------------------------------------------------

struct ToyNetConfig {
  std::size_t c1 = 32;
  std::size_t c2 = 64;
  std::size_t classes = 3;
  std::size_t m = 16;
  std::size_t k = 8;
  std::vector<std::size_t> hidden = {16, 16, 16};
  NormMode norm = NormMode::kSoftmax;
  AggMode agg = AggMode::kMax;
  RelationMode relation = RelationMode::kFull7;
  bool zero_absolute = false;
  bool center_input = false;
};

template <class Real>
struct ToyNetwork {
  PAConvLayer<Real> layer1;
  PAConvLayer<Real> layer2;
  std::vector<Real> head_w;  // classes x c2
  std::vector<Real> head_b;  // classes
  ToyNetConfig config;
};

template <class Real>
ToyNetwork<Real> toy_network_init(const ToyNetConfig& cfg,
                                  std::uint64_t seed) {
  ToyNetwork<Real> net;
  net.config = cfg;
  net.layer1 = paconv_layer_init<Real>(3, cfg.c1, cfg.m, cfg.hidden, cfg.norm,
                                       cfg.agg, cfg.relation, mix_seed(seed, 1));
  net.layer2 = paconv_layer_init<Real>(cfg.c1, cfg.c2, cfg.m, cfg.hidden,
                                       cfg.norm, cfg.agg, cfg.relation,
                                       mix_seed(seed, 2));
  net.layer1.zero_absolute = cfg.zero_absolute;
  net.layer2.zero_absolute = cfg.zero_absolute;
  net.head_w.resize(cfg.classes * cfg.c2);
  net.head_b.assign(cfg.classes, Real(0));
  const double s = std::sqrt(6.0 / static_cast<double>(cfg.c2 + cfg.classes));
  Rng rng(mix_seed(seed, 3));
  for (Real& v : net.head_w) v = static_cast<Real>(rng.uniform(-s, s));
  return net;
}

template <class Real>
struct ToyCache {
  ForwardCache<Real> layer1_cache;
  ForwardCache<Real> layer2_cache;
  std::vector<Real> out1;  // pre-rectifier layer 1 output, n x c1
  std::vector<Real> out2;  // pre-rectifier layer 2 output, n x c2
  std::vector<Real> pooled;
  std::vector<std::uint32_t> pool_argmax;
  std::vector<Real> logits;
};

// Forward pass over one cloud; the neighbor table is rebuilt per layer in
// coordinate space. Returns class logits.
template <class Real>
std::vector<Real> toy_forward(const ToyNetwork<Real>& net,
                              const PointCloud<Real>& cloud,
                              ToyCache<Real>* cache = nullptr) {
  const ToyNetConfig& cfg = net.config;
  const std::size_t n = cloud.n;

  std::vector<Real> f1 = cloud.coords;
  if (cfg.center_input) {
    Real centroid[3] = {Real(0), Real(0), Real(0)};
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) centroid[a] += cloud.coords[3 * i + a];
    for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) f1[3 * i + a] -= centroid[a];
  }

  const NeighborIndex knn1 = knn_build(cloud, cfg.k, true);
  PointCloud<Real> in1(cloud.coords, std::move(f1), 3);
  LayerForward<Real> fw1 = paconv_forward_fused(net.layer1, in1, knn1);

  std::vector<Real> h1 = fw1.out;
  for (Real& v : h1) v = std::max(Real(0), v);

  const NeighborIndex knn2 = knn_build(cloud, cfg.k, true);
  PointCloud<Real> in2(cloud.coords, std::move(h1), cfg.c1);
  LayerForward<Real> fw2 = paconv_forward_fused(net.layer2, in2, knn2);

  std::vector<Real> h2 = fw2.out;
  for (Real& v : h2) v = std::max(Real(0), v);

  std::vector<Real> pooled(cfg.c2);
  std::vector<std::uint32_t> pool_argmax(cfg.c2, 0);
  for (std::size_t c = 0; c < cfg.c2; ++c) {
    Real best = h2[c];
    std::uint32_t at = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (h2[i * cfg.c2 + c] > best) {
        best = h2[i * cfg.c2 + c];
        at = static_cast<std::uint32_t>(i);
      }
    }
    pooled[c] = best;
    pool_argmax[c] = at;
  }

  std::vector<Real> logits(cfg.classes);
  for (std::size_t cl = 0; cl < cfg.classes; ++cl) {
    Real acc = net.head_b[cl];
    const Real* wrow = net.head_w.data() + cl * cfg.c2;
    for (std::size_t c = 0; c < cfg.c2; ++c) acc += wrow[c] * pooled[c];
    logits[cl] = acc;
  }

  if (cache) {
    cache->layer1_cache = std::move(fw1.cache);
    cache->layer2_cache = std::move(fw2.cache);
    cache->out1 = std::move(fw1.out);
    cache->out2 = std::move(fw2.out);
    cache->pooled = std::move(pooled);
    cache->pool_argmax = std::move(pool_argmax);
    cache->logits = logits;
  }
  return logits;
}

template <class Real>
struct ToyGrads {
  GradientBundle<Real> layer1;
  GradientBundle<Real> layer2;
  std::vector<Real> head_dw;
  std::vector<Real> head_db;
};

template <class Real>
ToyGrads<Real> toy_backward(const ToyNetwork<Real>& net,
                            const ToyCache<Real>& cache,
                            const std::vector<Real>& d_logits) {
  const ToyNetConfig& cfg = net.config;
  const std::size_t n = cache.layer2_cache.n;

  ToyGrads<Real> g;
  g.head_dw.assign(cfg.classes * cfg.c2, Real(0));
  g.head_db.assign(cfg.classes, Real(0));

  std::vector<Real> d_pooled(cfg.c2, Real(0));
  for (std::size_t cl = 0; cl < cfg.classes; ++cl) {
    const Real dl = d_logits[cl];
    g.head_db[cl] = dl;
    const Real* wrow = net.head_w.data() + cl * cfg.c2;
    Real* dwrow = g.head_dw.data() + cl * cfg.c2;
    for (std::size_t c = 0; c < cfg.c2; ++c) {
      dwrow[c] = dl * cache.pooled[c];
      d_pooled[c] += wrow[c] * dl;
    }
  }

  // Global MAX pool routes each channel to its argmax point; the rectifier
  // masks recovered from the cached pre-activation outputs.
  std::vector<Real> d_out2(n * cfg.c2, Real(0));
  for (std::size_t c = 0; c < cfg.c2; ++c) {
    const std::size_t i = cache.pool_argmax[c];
    if (cache.out2[i * cfg.c2 + c] > Real(0))
      d_out2[i * cfg.c2 + c] = d_pooled[c];
  }
  g.layer2 = paconv_backward(net.layer2, cache.layer2_cache, d_out2);

  std::vector<Real> d_out1(n * cfg.c1, Real(0));
  for (std::size_t q = 0; q < d_out1.size(); ++q)
    if (cache.out1[q] > Real(0)) d_out1[q] = g.layer2.d_features[q];
  g.layer1 = paconv_backward(net.layer1, cache.layer1_cache, d_out1);
  return g;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 0.05;
  double lambda_corr = 0.01;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-step cross-entropy + lambda * L_corr
  double acc = 0.0;       // training accuracy over the epoch's forwards
  double l_corr = 0.0;    // end-of-epoch, summed over both banks
  double mean_abs_r = 0.0;
};

namespace detail {

template <class Real>
void softmax_xent(const std::vector<Real>& logits, int label, double* loss,
                  std::vector<Real>* d_logits) {
  Real mx = logits[0];
  for (const Real v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i] - mx));
    sum += e[i];
  }
  *loss = -std::log(e[label] / sum);
  d_logits->resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    (*d_logits)[i] =
        static_cast<Real>(e[i] / sum - (static_cast<int>(i) == label ? 1 : 0));
}

template <class Real>
void sgd_step(std::vector<Real>& params, const std::vector<Real>& grads,
              double lr) {
  for (std::size_t q = 0; q < params.size(); ++q)
    params[q] -= static_cast<Real>(lr) * grads[q];
}

template <class Real>
void apply_layer_grads(PAConvLayer<Real>& layer, const GradientBundle<Real>& g,
                       double lr) {
  sgd_step(layer.bank.values, g.d_bank, lr);
  for (std::size_t l = 0; l < layer.scorenet.layers.size(); ++l) {
    sgd_step(layer.scorenet.layers[l].w, g.d_scorenet[l].dw, lr);
    sgd_step(layer.scorenet.layers[l].b, g.d_scorenet[l].db, lr);
  }
}

}  // namespace detail

// Plain per-sample SGD on cross-entropy plus lambda times the bank
// correlation loss. Sample order is reshuffled every epoch from the run seed,
// so the whole trajectory is deterministic.
template <class Real>
std::vector<EpochStats> train(ToyNetwork<Real>& net,
                              const SynthDataset<Real>& ds,
                              const TrainConfig& cfg) {
  if (ds.samples.empty()) throw SizeError("train: dataset is empty");
  std::vector<EpochStats> history;
  history.reserve(cfg.epochs);
  std::vector<std::size_t> order(ds.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(mix_seed(cfg.seed, 0x07de7));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const std::size_t si : order) {
      const Sample<Real>& sample = ds.samples[si];
      ToyCache<Real> cache;
      const std::vector<Real> logits = toy_forward(net, sample.cloud, &cache);

      double xent = 0.0;
      std::vector<Real> d_logits;
      detail::softmax_xent(logits, sample.label, &xent, &d_logits);
      double step_loss = xent;
      if (cfg.lambda_corr != 0.0)
        step_loss += cfg.lambda_corr *
                     (corr_loss(net.layer1.bank) + corr_loss(net.layer2.bank));
      if (!std::isfinite(step_loss))
        throw NumericalError("train: loss diverged at epoch " +
                             std::to_string(epoch));
      loss_sum += step_loss;

      int pred = 0;
      for (std::size_t cl = 1; cl < logits.size(); ++cl)
        if (logits[cl] > logits[pred]) pred = static_cast<int>(cl);
      if (pred == sample.label) ++correct;

      ToyGrads<Real> g = toy_backward(net, cache, d_logits);
      if (cfg.lambda_corr != 0.0) {
        const std::vector<Real> cg1 = corr_loss_grad(net.layer1.bank);
        const std::vector<Real> cg2 = corr_loss_grad(net.layer2.bank);
        for (std::size_t q = 0; q < cg1.size(); ++q)
          g.layer1.d_bank[q] += static_cast<Real>(cfg.lambda_corr) * cg1[q];
        for (std::size_t q = 0; q < cg2.size(); ++q)
          g.layer2.d_bank[q] += static_cast<Real>(cfg.lambda_corr) * cg2[q];
      }

      detail::apply_layer_grads(net.layer1, g.layer1, cfg.lr);
      detail::apply_layer_grads(net.layer2, g.layer2, cfg.lr);
      detail::sgd_step(net.head_w, g.head_dw, cfg.lr);
      detail::sgd_step(net.head_b, g.head_db, cfg.lr);
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(ds.samples.size());
    st.acc = static_cast<double>(correct) /
             static_cast<double>(ds.samples.size());
    const CorrReport<Real> r1 = pearson_r_pairs(net.layer1.bank);
    const CorrReport<Real> r2 = pearson_r_pairs(net.layer2.bank);
    st.l_corr = r1.loss + r2.loss;
    st.mean_abs_r = 0.5 * (r1.mean_abs_r + r2.mean_abs_r);
    history.push_back(st);
  }
  return history;
}

// Forward-only accuracy, optionally with a transform applied to every sample.
template <class Real>
double evaluate(const ToyNetwork<Real>& net, const SynthDataset<Real>& ds,
                const Transform* transform = nullptr) {
  if (ds.samples.empty()) throw SizeError("evaluate: dataset is empty");
  std::size_t correct = 0;
  for (const Sample<Real>& sample : ds.samples) {
    std::vector<Real> logits;
    if (transform) {
      logits = toy_forward(net, apply_transform(sample.cloud, *transform));
    } else {
      logits = toy_forward(net, sample.cloud);
    }
    int pred = 0;
    for (std::size_t cl = 1; cl < logits.size(); ++cl)
      if (logits[cl] > logits[pred]) pred = static_cast<int>(cl);
    if (pred == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

}  // namespace paconv
