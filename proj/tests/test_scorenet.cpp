#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "paconv/scorenet.hpp"

using namespace paconv;

namespace {

RelationTensor<double> tensor_from_rows(std::vector<double> rows,
                                        std::size_t d_in) {
  RelationTensor<double> rel;
  rel.d_in = d_in;
  rel.k = 1;
  rel.n = rows.size() / d_in;
  rel.mode = RelationMode::kFull7;
  rel.values = std::move(rows);
  return rel;
}

}  // namespace

TEST_CASE("softmax of [ln 2, 0] is [2/3, 1/3]") {
  double out[2];
  const double logits[2] = {std::log(2.0), 0.0};
  normalize_score_row(logits, 2, NormMode::kSoftmax, out);
  CHECK(out[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("clamped tanh zeroes negatives and pins tanh(0.5)") {
  double out[2];
  const double logits[2] = {-1.0, 0.5};
  normalize_score_row(logits, 2, NormMode::kTanhClamped, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == doctest::Approx(0.462117).epsilon(1e-6));
}

TEST_CASE("none mode passes logits through unchanged") {
  double out[3];
  const double logits[3] = {-4.0, 0.0, 17.5};
  normalize_score_row(logits, 3, NormMode::kNone, out);
  CHECK(out[0] == -4.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 17.5);
}

TEST_CASE("zero-weight net under softmax yields uniform scores") {
  auto net = scorenet_init<double>(7, {16, 16, 16}, 4, NormMode::kSoftmax, 5);
  for (auto& layer : net.layers) {
    std::fill(layer.w.begin(), layer.w.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  Rng rng(202);
  std::vector<double> rows(6 * 7);
  for (double& v : rows) v = rng.uniform(-2.0, 2.0);
  const auto fwd = scorenet_forward(net, tensor_from_rows(rows, 7));
  for (const double s : fwd.scores) CHECK(s == doctest::Approx(0.25));
}

TEST_CASE("single identity affine with none mode is a passthrough") {
  ScoreNet<double> net;
  net.d_in = 3;
  net.m = 3;
  net.norm = NormMode::kNone;
  AffineLayer<double> id;
  id.in = 3;
  id.out = 3;
  id.w = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  id.b = {0, 0, 0};
  net.layers.push_back(id);

  const std::vector<double> rows = {1.0, 0.0, 0.0, -2.5, 4.0, 0.5};
  const auto fwd = scorenet_forward(net, tensor_from_rows(rows, 3));
  CHECK(fwd.logits == rows);
  CHECK(fwd.scores == rows);
}

TEST_CASE("forward matches the per-row scalar oracle") {
  Rng rng(203);
  for (const NormMode norm :
       {NormMode::kSoftmax, NormMode::kSigmoid, NormMode::kTanhClamped,
        NormMode::kNone}) {
    auto net = scorenet_init<double>(7, {16, 16, 16}, 8, norm, 91);
    for (auto& layer : net.layers)
      for (double& b : layer.b) b = rng.uniform(-0.3, 0.3);

    std::vector<double> rows(40 * 7);
    for (double& v : rows) v = rng.uniform(-1.5, 1.5);
    const auto rel = tensor_from_rows(rows, 7);
    const auto fwd = scorenet_forward(net, rel);

    for (std::size_t r = 0; r < rel.n; ++r) {
      const std::vector<double> x(rel.values.begin() + r * 7,
                                  rel.values.begin() + (r + 1) * 7);
      const auto logits = oracle::mlp_row(net, x);
      const auto scores = oracle::normalize_row(logits, norm);
      for (std::size_t m = 0; m < 8; ++m) {
        CHECK(fwd.logits[r * 8 + m] ==
              doctest::Approx(logits[m]).epsilon(1e-12));
        CHECK(fwd.scores[r * 8 + m] ==
              doctest::Approx(scores[m]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("normalization ranges hold over random logit rows") {
  // Logits stay within +-8: past |x| ~ 19, tanh (and a dominated softmax
  // denominator) round to exactly 1.0 in double and the open bounds cannot
  // hold for any implementation of the written formulas.
  Rng rng(204);
  std::vector<double> logits(16);
  std::vector<double> out(16);
  for (int rep = 0; rep < 2000; ++rep) {
    for (double& v : logits) v = rng.uniform(-8.0, 8.0);

    normalize_score_row(logits.data(), 16, NormMode::kSoftmax, out.data());
    double sum = 0.0;
    for (const double s : out) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
      sum += s;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    normalize_score_row(logits.data(), 16, NormMode::kSigmoid, out.data());
    for (const double s : out) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }

    normalize_score_row(logits.data(), 16, NormMode::kTanhClamped, out.data());
    for (const double s : out) {
      CHECK(s >= 0.0);
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("forward rejects a relation width mismatch") {
  const auto net =
      scorenet_init<double>(7, {8}, 4, NormMode::kSoftmax, 3);
  std::vector<double> rows(4 * 4, 0.1);
  auto rel = tensor_from_rows(rows, 4);
  rel.mode = RelationMode::kX4;
  CHECK_THROWS_AS(scorenet_forward(net, rel), InputError);
}

TEST_CASE("mode parsing round trips and rejects junk") {
  CHECK(parse_norm_mode("softmax") == NormMode::kSoftmax);
  CHECK(parse_norm_mode("tanh_clamped") == NormMode::kTanhClamped);
  CHECK(parse_agg_mode("max") == AggMode::kMax);
  CHECK(parse_relation_mode("full7") == RelationMode::kFull7);
  CHECK(parse_forward_path("fused") == ForwardPath::kFused);
  CHECK_THROWS_AS(parse_norm_mode("sofmax"), InputError);
  CHECK_THROWS_AS(parse_agg_mode(""), InputError);
  CHECK(std::string(to_string(NormMode::kSigmoid)) == "sigmoid");
  CHECK(std::string(to_string(AggMode::kAvg)) == "avg");
}
