#pragma once

#include <cstdint>
#include <vector>

namespace paconv {

// Tally of multiply-add operations executed by an instrumented forward pass.
// Only three stages count: ScoreNet affine products, feature transforms by
// weight matrices, and kernel/feature assembly. Bias adds, activations, score
// normalization, relation building and aggregation are excluded from the
// convention on both the counter and the closed-form side.
struct CostCounter {
  std::uint64_t madds = 0;
};

// Closed-form cost of one forward pass.
//   flops          multiply-adds under the convention above
//   peak_elements  largest simultaneously live intermediate element count
struct CostModel {
  std::uint64_t flops = 0;
  std::uint64_t peak_elements = 0;
};

inline std::uint64_t scorenet_madds(std::uint64_t n, std::uint64_t k,
                                    std::uint64_t d_in,
                                    const std::vector<std::uint64_t>& hidden,
                                    std::uint64_t m) {
  std::uint64_t per_pair = 0;
  std::uint64_t in = d_in;
  for (const std::uint64_t h : hidden) {
    per_pair += in * h;
    in = h;
  }
  per_pair += in * m;
  return n * k * per_pair;
}

// Naive path: every (center, neighbor) pair assembles its own C_in x C_out
// kernel from the M bank matrices, then transforms the neighbor feature with
// it. The kernel tensor (n*k*C_in*C_out) and the per-neighbor values
// (n*k*C_out) are live together.
inline CostModel cost_model_naive(std::uint64_t n, std::uint64_t k,
                                  std::uint64_t m, std::uint64_t c_in,
                                  std::uint64_t c_out, std::uint64_t d_in,
                                  const std::vector<std::uint64_t>& hidden) {
  CostModel cm;
  cm.flops = scorenet_madds(n, k, d_in, hidden, m) +
             n * k * m * c_in * c_out +  // kernel assembly
             n * k * c_in * c_out;       // feature transform
  cm.peak_elements = n * k * c_in * c_out + n * k * c_out;
  return cm;
}

// Fused path: transform every point's feature by all M matrices once
// (n*M*C_out buffer), then combine transformed rows with scores per neighbor,
// aggregating on the fly. Only the transform buffer plus one k*C_out
// per-neighborhood scratch row block is ever live; no n*k*C_in*C_out tensor
// exists.
inline CostModel cost_model_fused(std::uint64_t n, std::uint64_t k,
                                  std::uint64_t m, std::uint64_t c_in,
                                  std::uint64_t c_out, std::uint64_t d_in,
                                  const std::vector<std::uint64_t>& hidden) {
  CostModel cm;
  cm.flops = scorenet_madds(n, k, d_in, hidden, m) +
             n * m * c_in * c_out +  // transform by all matrices
             n * k * m * c_out;      // score-weighted assembly
  cm.peak_elements = n * m * c_out + k * c_out;
  return cm;
}

}  // namespace paconv
