#pragma once

#include <cstddef>
#include <string>

#include "paconv/error.hpp"

namespace paconv {

// Neighborhood aggregation of per-neighbor values into one output row.
enum class AggMode { kMax, kSum, kAvg };

// Normalization applied to raw ScoreNet outputs.
enum class NormMode { kSoftmax, kSigmoid, kTanhClamped, kNone };

// Layout of the position relation vector fed to the ScoreNet.
enum class RelationMode { kFull7, kX4, kY4, kZ4 };

// Which forward algorithm produced a cache.
enum class ForwardPath { kNaive, kFused };

// Scalar loss reduction used by the finite-difference checker.
enum class LossKind { kSum, kSumSquares };

inline const char* to_string(AggMode m) {
  switch (m) {
    case AggMode::kMax: return "max";
    case AggMode::kSum: return "sum";
    case AggMode::kAvg: return "avg";
  }
  return "?";
}

inline const char* to_string(NormMode m) {
  switch (m) {
    case NormMode::kSoftmax: return "softmax";
    case NormMode::kSigmoid: return "sigmoid";
    case NormMode::kTanhClamped: return "tanh_clamped";
    case NormMode::kNone: return "none";
  }
  return "?";
}

inline const char* to_string(RelationMode m) {
  switch (m) {
    case RelationMode::kFull7: return "full7";
    case RelationMode::kX4: return "x4";
    case RelationMode::kY4: return "y4";
    case RelationMode::kZ4: return "z4";
  }
  return "?";
}

inline const char* to_string(ForwardPath p) {
  return p == ForwardPath::kNaive ? "naive" : "fused";
}

inline const char* to_string(LossKind l) {
  return l == LossKind::kSum ? "sum" : "sum_squares";
}

inline AggMode parse_agg_mode(const std::string& s) {
  if (s == "max") return AggMode::kMax;
  if (s == "sum") return AggMode::kSum;
  if (s == "avg") return AggMode::kAvg;
  throw InputError("unknown aggregation mode: " + s);
}

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "softmax") return NormMode::kSoftmax;
  if (s == "sigmoid") return NormMode::kSigmoid;
  if (s == "tanh_clamped") return NormMode::kTanhClamped;
  if (s == "none") return NormMode::kNone;
  throw InputError("unknown score normalization mode: " + s);
}

inline RelationMode parse_relation_mode(const std::string& s) {
  if (s == "full7") return RelationMode::kFull7;
  if (s == "x4") return RelationMode::kX4;
  if (s == "y4") return RelationMode::kY4;
  if (s == "z4") return RelationMode::kZ4;
  throw InputError("unknown relation mode: " + s);
}

inline ForwardPath parse_forward_path(const std::string& s) {
  if (s == "naive") return ForwardPath::kNaive;
  if (s == "fused") return ForwardPath::kFused;
  throw InputError("unknown forward path: " + s);
}

// Width of the relation vector for a given mode.
inline std::size_t relation_d_in(RelationMode m) {
  return m == RelationMode::kFull7 ? 7 : 4;
}

}  // namespace paconv
