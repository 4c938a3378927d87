#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "paconv/serialize.hpp"
#include "paconv/trainer.hpp"

using namespace paconv;

namespace {

// Least-squares sphere fit: 2 p.o + t = |p|^2 with t = r^2 - |o|^2, solved
// through the 4x4 normal equations. Returns the largest deviation of any
// point's distance-to-center from the mean radius.
double sphere_fit_residual(const PointCloud<double>& cloud) {
  double A[4][4] = {};
  double rhs[4] = {};
  for (std::size_t i = 0; i < cloud.n; ++i) {
    const double* p = &cloud.coords[3 * i];
    const double row[4] = {2 * p[0], 2 * p[1], 2 * p[2], 1.0};
    const double y = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) A[a][b] += row[a] * row[b];
      rhs[a] += row[a] * y;
    }
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    for (int b = 0; b < 4; ++b) std::swap(A[col][b], A[piv][b]);
    std::swap(rhs[col], rhs[piv]);
    for (int r = 0; r < 4; ++r) {
      if (r == col || A[col][col] == 0.0) continue;
      const double f = A[r][col] / A[col][col];
      for (int b = 0; b < 4; ++b) A[r][b] -= f * A[col][b];
      rhs[r] -= f * rhs[col];
    }
  }
  double o[3], radius_sum = 0.0;
  for (int a = 0; a < 3; ++a) o[a] = rhs[a] / A[a][a];
  std::vector<double> radii(cloud.n);
  for (std::size_t i = 0; i < cloud.n; ++i) {
    const double* p = &cloud.coords[3 * i];
    radii[i] = std::sqrt((p[0] - o[0]) * (p[0] - o[0]) +
                         (p[1] - o[1]) * (p[1] - o[1]) +
                         (p[2] - o[2]) * (p[2] - o[2]));
    radius_sum += radii[i];
  }
  const double mean_radius = radius_sum / static_cast<double>(cloud.n);
  double worst = 0.0;
  for (const double r : radii) worst = std::max(worst, std::abs(r - mean_radius));
  return worst;
}

ToyNetConfig tiny_config() {
  ToyNetConfig cfg;
  cfg.c1 = 8;
  cfg.c2 = 12;
  cfg.m = 4;
  cfg.k = 6;
  cfg.hidden = {8, 8};
  return cfg;
}

}  // namespace

TEST_CASE("class labels carry fixed names") {
  CHECK(std::strcmp(class_name(0), "sphere") == 0);
  CHECK(std::strcmp(class_name(1), "cube") == 0);
  CHECK(std::strcmp(class_name(2), "plane") == 0);
}

TEST_CASE("synth_dataset validates its sizes") {
  CHECK_THROWS_AS(synth_dataset<double>(0, 32, 1), SizeError);
  CHECK_THROWS_AS(synth_dataset<double>(2, 15, 1), SizeError);
}

TEST_CASE("synth_dataset is reproducible and label-blocked") {
  const auto a = synth_dataset<double>(3, 24, 801);
  const auto b = synth_dataset<double>(3, 24, 801);
  const auto c = synth_dataset<double>(3, 24, 802);
  REQUIRE(a.samples.size() == 9);
  bool all_equal = true;
  for (std::size_t s = 0; s < a.samples.size(); ++s) {
    CHECK(a.samples[s].label == static_cast<int>(s / 3));
    if (a.samples[s].cloud.coords != b.samples[s].cloud.coords)
      all_equal = false;
  }
  CHECK(all_equal);
  CHECK(a.samples[0].cloud.coords != c.samples[0].cloud.coords);
}

TEST_CASE("every sample is centered and scaled into the unit ball") {
  const auto ds = synth_dataset<double>(4, 48, 803);
  for (const auto& sample : ds.samples) {
    const auto& cloud = sample.cloud;
    double centroid[3] = {0, 0, 0};
    double max_norm = 0.0;
    for (std::size_t i = 0; i < cloud.n; ++i) {
      const double* p = &cloud.coords[3 * i];
      for (int a = 0; a < 3; ++a) centroid[a] += p[a];
      max_norm = std::max(max_norm,
                          std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    for (int a = 0; a < 3; ++a)
      CHECK(std::abs(centroid[a] / static_cast<double>(cloud.n)) < 1e-12);
    CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sphere samples sit on a common sphere, other classes do not") {
  const auto ds = synth_dataset<double>(4, 96, 804);
  for (const auto& sample : ds.samples) {
    const double residual = sphere_fit_residual(sample.cloud);
    if (sample.label == 0) {
      CHECK(residual <= 1e-6);
    } else {
      CHECK(residual > 1e-3);
    }
  }
}

TEST_CASE("cube samples keep six axis-aligned faces after normalization") {
  const auto ds = synth_dataset<double>(4, 96, 805);
  for (const auto& sample : ds.samples) {
    if (sample.label != 1) continue;
    const auto& cloud = sample.cloud;
    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = hi[a] = cloud.coords[a];
    }
    for (std::size_t i = 1; i < cloud.n; ++i)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], cloud.coords[3 * i + a]);
        hi[a] = std::max(hi[a], cloud.coords[3 * i + a]);
      }
    const double h[3] = {(hi[0] - lo[0]) / 2, (hi[1] - lo[1]) / 2,
                         (hi[2] - lo[2]) / 2};
    CHECK(h[0] == doctest::Approx(h[1]).epsilon(1e-9));
    CHECK(h[0] == doctest::Approx(h[2]).epsilon(1e-9));
    for (std::size_t i = 0; i < cloud.n; ++i) {
      double face_gap = 1e30;
      for (int a = 0; a < 3; ++a) {
        const double mid = (lo[a] + hi[a]) / 2;
        face_gap =
            std::min(face_gap, h[a] - std::abs(cloud.coords[3 * i + a] - mid));
      }
      CHECK(std::abs(face_gap) < 1e-9);
    }
  }
}

TEST_CASE("plane samples stay coplanar after normalization") {
  const auto ds = synth_dataset<double>(4, 96, 806);
  for (const auto& sample : ds.samples) {
    if (sample.label != 2) continue;
    const auto& cloud = sample.cloud;
    const double* p0 = &cloud.coords[0];
    double best[3] = {0, 0, 0};
    double best_norm = 0.0;
    for (std::size_t i = 1; i < 8; ++i)
      for (std::size_t j = i + 1; j < 9; ++j) {
        const double* pi = &cloud.coords[3 * i];
        const double* pj = &cloud.coords[3 * j];
        const double u[3] = {pi[0] - p0[0], pi[1] - p0[1], pi[2] - p0[2]};
        const double v[3] = {pj[0] - p0[0], pj[1] - p0[1], pj[2] - p0[2]};
        const double c[3] = {u[1] * v[2] - u[2] * v[1],
                             u[2] * v[0] - u[0] * v[2],
                             u[0] * v[1] - u[1] * v[0]};
        const double nn = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        if (nn > best_norm) {
          best_norm = nn;
          for (int a = 0; a < 3; ++a) best[a] = c[a];
        }
      }
    REQUIRE(best_norm > 0.0);
    const double inv = 1.0 / std::sqrt(best_norm);
    for (int a = 0; a < 3; ++a) best[a] *= inv;
    for (std::size_t i = 0; i < cloud.n; ++i) {
      const double* p = &cloud.coords[3 * i];
      const double d = best[0] * (p[0] - p0[0]) + best[1] * (p[1] - p0[1]) +
                       best[2] * (p[2] - p0[2]);
      CHECK(std::abs(d) < 1e-9);
    }
  }
}

TEST_CASE("transform specs parse and print back") {
  CHECK(parse_transform("permute").kind == TransformKind::kPermute);
  CHECK(parse_transform("rotate_z:90").amount == 90.0);
  CHECK(parse_transform("translate:0.2").amount == 0.2);
  CHECK(parse_transform("scale:0.8").amount == 0.8);
  CHECK(parse_transform("jitter:0.01").amount == 0.01);

  for (const char* spec :
       {"permute", "rotate_z:90", "translate:0.2", "scale:0.8", "jitter:0.01"})
    CHECK(parse_transform(spec).name() == spec);

  CHECK_THROWS_AS(parse_transform("flip"), InputError);
  CHECK_THROWS_AS(parse_transform("translate"), InputError);
  CHECK_THROWS_AS(parse_transform("scale:abc"), InputError);
}

TEST_CASE("permute transform reorders points with their features") {
  PointCloud<double> cloud({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12},
                           {10, 20, 30, 40}, 1);
  Transform t = parse_transform("permute", 99);
  const auto out = apply_transform(cloud, t);

  std::set<std::array<double, 4>> before, after;
  for (std::size_t i = 0; i < 4; ++i) {
    before.insert({cloud.coords[3 * i], cloud.coords[3 * i + 1],
                   cloud.coords[3 * i + 2], cloud.features[i]});
    after.insert({out.coords[3 * i], out.coords[3 * i + 1],
                  out.coords[3 * i + 2], out.features[i]});
  }
  CHECK(before == after);
  CHECK(out.coords != cloud.coords);

  const auto again = apply_transform(cloud, t);
  CHECK(again.coords == out.coords);
}

TEST_CASE("quarter-turn rotations are exact, other angles trigonometric") {
  PointCloud<double> cloud({0.3, -0.7, 0.2}, {}, 0);

  auto rot = [&](const char* spec) {
    return apply_transform(cloud, parse_transform(spec));
  };
  CHECK(rot("rotate_z:90").coords == std::vector<double>{0.7, 0.3, 0.2});
  CHECK(rot("rotate_z:180").coords == std::vector<double>{-0.3, 0.7, 0.2});
  CHECK(rot("rotate_z:270").coords == std::vector<double>{-0.7, -0.3, 0.2});

  const auto r45 = rot("rotate_z:45");
  const double s = std::sqrt(0.5);
  CHECK(r45.coords[0] == doctest::Approx(s * 0.3 + s * 0.7).epsilon(1e-12));
  CHECK(r45.coords[1] == doctest::Approx(s * 0.3 - s * 0.7).epsilon(1e-12));
  CHECK(r45.coords[2] == 0.2);
}

TEST_CASE("translate, scale and jitter act on coordinates") {
  Rng rng(807);
  const auto cloud = oracle::random_cloud<double>(rng, 200, 0);

  const auto moved = apply_transform(cloud, parse_transform("translate:0.25"));
  for (std::size_t q = 0; q < cloud.coords.size(); ++q)
    CHECK(moved.coords[q] == cloud.coords[q] + 0.25);

  const auto scaled = apply_transform(cloud, parse_transform("scale:0.8"));
  for (std::size_t q = 0; q < cloud.coords.size(); ++q)
    CHECK(scaled.coords[q] == cloud.coords[q] * 0.8);

  Transform jit = parse_transform("jitter:0.01", 808);
  const auto noisy = apply_transform(cloud, jit);
  double sq_sum = 0.0;
  for (std::size_t q = 0; q < cloud.coords.size(); ++q) {
    const double d = noisy.coords[q] - cloud.coords[q];
    CHECK(std::abs(d) < 0.06);
    sq_sum += d * d;
  }
  const double sigma =
      std::sqrt(sq_sum / static_cast<double>(cloud.coords.size()));
  CHECK(sigma > 0.008);
  CHECK(sigma < 0.012);
  CHECK(apply_transform(cloud, jit).coords == noisy.coords);
}

TEST_CASE("toy network init is reproducible") {
  const auto a = toy_network_init<double>(tiny_config(), 809);
  const auto b = toy_network_init<double>(tiny_config(), 809);
  const auto c = toy_network_init<double>(tiny_config(), 810);
  CHECK(toynet_to_json(a).dump() == toynet_to_json(b).dump());
  CHECK(toynet_to_json(a).dump() != toynet_to_json(c).dump());
}

TEST_CASE("toy forward logits are invariant to point order") {
  const auto net = toy_network_init<double>(tiny_config(), 811);
  const auto ds = synth_dataset<double>(2, 40, 812);
  for (const auto& sample : ds.samples) {
    const auto base = toy_forward(net, sample.cloud);
    for (std::uint64_t pseed : {1u, 2u, 3u}) {
      const auto shuffled =
          apply_transform(sample.cloud, parse_transform("permute", pseed));
      CHECK(toy_forward(net, shuffled) == base);
    }
  }
}

TEST_CASE("zero learning rate leaves every parameter untouched") {
  auto net = toy_network_init<double>(tiny_config(), 813);
  const std::string before = toynet_to_json(net).dump();
  const auto ds = synth_dataset<double>(2, 32, 814);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.0;
  cfg.lambda_corr = 0.01;
  cfg.seed = 815;
  const auto history = train(net, ds, cfg);
  CHECK(history.size() == 3);
  CHECK(toynet_to_json(net).dump() == before);
}

TEST_CASE("a short training run reduces the loss") {
  auto net = toy_network_init<double>(tiny_config(), 816);
  const auto ds = synth_dataset<double>(4, 32, 817);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.lr = 0.05;
  cfg.lambda_corr = 0.01;
  cfg.seed = 818;
  const auto history = train(net, ds, cfg);
  REQUIRE(history.size() == 25);
  CHECK(history.front().epoch == 1);
  CHECK(history.back().epoch == 25);
  CHECK(history.back().loss < history.front().loss);
  CHECK(history.back().acc >= history.front().acc);
  CHECK(history.back().acc >= 0.5);
  std::size_t non_increasing = 0;
  for (std::size_t e = 1; e < history.size(); ++e)
    if (history[e].loss <= history[e - 1].loss + 1e-12) ++non_increasing;
  CHECK(non_increasing * 5 >= (history.size() - 1) * 3);
}

TEST_CASE("correlation penalty lowers mean absolute correlation") {
  const auto ds = synth_dataset<double>(3, 32, 819);
  TrainConfig base;
  base.epochs = 15;
  base.lr = 0.05;
  base.seed = 820;

  auto plain = toy_network_init<double>(tiny_config(), 821);
  TrainConfig off = base;
  off.lambda_corr = 0.0;
  const auto plain_hist = train(plain, ds, off);

  auto reg = toy_network_init<double>(tiny_config(), 821);
  const double init_l_corr =
      pearson_r_pairs(reg.layer1.bank).loss + pearson_r_pairs(reg.layer2.bank).loss;
  TrainConfig on = base;
  on.lambda_corr = 10.0;
  const auto reg_hist = train(reg, ds, on);

  CHECK(reg_hist.back().mean_abs_r < plain_hist.back().mean_abs_r);
  CHECK(reg_hist.back().l_corr < init_l_corr);
}

TEST_CASE("training throws once the loss stops being finite") {
  auto net = toy_network_init<double>(tiny_config(), 822);
  const auto ds = synth_dataset<double>(1, 32, 823);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 1e80;
  cfg.lambda_corr = 0.0;
  cfg.seed = 824;
  CHECK_THROWS_AS(train(net, ds, cfg), NumericalError);
}

TEST_CASE("evaluate breaks prediction ties toward the lowest class") {
  auto net = toy_network_init<double>(tiny_config(), 825);
  std::fill(net.head_w.begin(), net.head_w.end(), 0.0);
  std::fill(net.head_b.begin(), net.head_b.end(), 0.0);
  const auto ds = synth_dataset<double>(3, 32, 826);
  CHECK(evaluate(net, ds) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("accuracy is unchanged under point permutation") {
  auto net = toy_network_init<double>(tiny_config(), 827);
  const auto ds = synth_dataset<double>(3, 32, 828);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.lr = 0.05;
  cfg.lambda_corr = 0.01;
  cfg.seed = 829;
  train(net, ds, cfg);

  const Transform t = parse_transform("permute", 830);
  CHECK(evaluate(net, ds, &t) == evaluate(net, ds));
}

TEST_CASE("relative-only relations with centered input shrug off translation") {
  ToyNetConfig cfg = tiny_config();
  cfg.zero_absolute = true;
  cfg.center_input = true;
  auto net = toy_network_init<double>(cfg, 831);
  const auto ds = synth_dataset<double>(3, 32, 832);
  TrainConfig tc;
  tc.epochs = 8;
  tc.lr = 0.05;
  tc.lambda_corr = 0.01;
  tc.seed = 833;
  train(net, ds, tc);

  const Transform t = parse_transform("translate:0.37");
  CHECK(evaluate(net, ds, &t) == evaluate(net, ds));
}
