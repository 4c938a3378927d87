#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "paconv/error.hpp"
#include "paconv/exec.hpp"
#include "paconv/modes.hpp"

namespace paconv {

static_assert(std::endian::native == std::endian::little,
              "binary point cloud IO assumes a little-endian host");

// A point set with optional per-point features. Both buffers are row-major:
// coords is n x 3, features is n x c_in (empty when c_in == 0).
template <class Real>
struct PointCloud {
  std::vector<Real> coords;
  std::vector<Real> features;
  std::size_t n = 0;
  std::size_t c_in = 0;

  PointCloud() = default;

  PointCloud(std::vector<Real> xyz, std::vector<Real> feat, std::size_t c)
      : coords(std::move(xyz)), features(std::move(feat)), c_in(c) {
    if (coords.size() % 3 != 0)
      throw SizeError("point cloud: coords size " +
                      std::to_string(coords.size()) + " is not a multiple of 3");
    n = coords.size() / 3;
    if (features.size() != n * c_in)
      throw SizeError("point cloud: feature buffer has " +
                      std::to_string(features.size()) + " values, expected " +
                      std::to_string(n * c_in));
    for (const Real v : coords)
      if (!std::isfinite(static_cast<double>(v)))
        throw InputError("point cloud: non-finite coordinate");
    for (const Real v : features)
      if (!std::isfinite(static_cast<double>(v)))
        throw InputError("point cloud: non-finite feature value");
  }

  static PointCloud from_coords(std::vector<Real> xyz) {
    return PointCloud(std::move(xyz), {}, 0);
  }

  bool has_features() const { return c_in > 0; }

  const Real* point(std::size_t i) const { return coords.data() + 3 * i; }
  Real* point(std::size_t i) { return coords.data() + 3 * i; }
  const Real* feature(std::size_t i) const {
    return features.data() + c_in * i;
  }
};

// k nearest neighbors per point, row-major n x k. Rows are ordered by
// ascending distance to the center, distance ties broken by ascending index.
// With include_self the center itself sits in slot 0.
struct NeighborIndex {
  std::vector<std::uint32_t> indices;
  std::size_t n = 0;
  std::size_t k = 0;
  bool include_self = true;

  std::uint32_t at(std::size_t i, std::size_t j) const {
    return indices[i * k + j];
  }
};

// Result of farthest point sampling; indices[0] == start.
struct SampleIndex {
  std::vector<std::uint32_t> indices;
  std::uint32_t start = 0;
};

// Per-pair position relation vectors, row-major n x k x d_in.
template <class Real>
struct RelationTensor {
  std::vector<Real> values;
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t d_in = 0;
  RelationMode mode = RelationMode::kFull7;

  const Real* row(std::size_t i, std::size_t j) const {
    return values.data() + (i * k + j) * d_in;
  }
};

namespace detail {

template <class Real>
void check_finite_coords(const PointCloud<Real>& cloud, const char* who) {
  for (const Real v : cloud.coords)
    if (!std::isfinite(static_cast<double>(v)))
      throw InputError(std::string(who) + ": non-finite coordinate");
}

template <class Real>
Real dist2(const Real* a, const Real* b) {
  const Real dx = a[0] - b[0];
  const Real dy = a[1] - b[1];
  const Real dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// Brute-force k nearest neighbors: full distance scan per center with partial
// selection, squared-distance comparisons, ties by ascending index.
template <class Real>
NeighborIndex knn_build(const PointCloud<Real>& cloud, std::size_t k,
                        bool include_self = true) {
  const std::size_t n = cloud.n;
  if (k < 1) throw SizeError("knn_build: k must be at least 1");
  const std::size_t avail = include_self ? n : (n > 0 ? n - 1 : 0);
  if (k > avail)
    throw SizeError("knn_build: k = " + std::to_string(k) +
                    " exceeds the " + std::to_string(avail) +
                    " available neighbors (n = " + std::to_string(n) + ")");
  detail::check_finite_coords(cloud, "knn_build");

  NeighborIndex out;
  out.n = n;
  out.k = k;
  out.include_self = include_self;
  out.indices.resize(n * k);

  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::pair<Real, std::uint32_t>> cand;
    cand.reserve(n);
    for (std::size_t i = lo; i < hi; ++i) {
      const Real* pi = cloud.point(i);
      cand.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        cand.emplace_back(detail::dist2(pi, cloud.point(j)),
                          static_cast<std::uint32_t>(j));
      }
      const std::size_t need = include_self ? k - 1 : k;
      std::partial_sort(cand.begin(), cand.begin() + need, cand.end());
      std::uint32_t* row = out.indices.data() + i * k;
      std::size_t slot = 0;
      if (include_self) row[slot++] = static_cast<std::uint32_t>(i);
      for (std::size_t j = 0; j < need; ++j) row[slot++] = cand[j].second;
    }
  });
  return out;
}

// Greedy farthest point sampling: repeatedly take the point maximizing the
// distance to the already selected set, ties broken by ascending index.
template <class Real>
SampleIndex fps(const PointCloud<Real>& cloud, std::size_t n_samples,
                std::uint32_t start) {
  const std::size_t n = cloud.n;
  if (n_samples < 1) throw SizeError("fps: n_samples must be at least 1");
  if (n_samples > n)
    throw SizeError("fps: n_samples = " + std::to_string(n_samples) +
                    " exceeds n = " + std::to_string(n));
  if (start >= n)
    throw SizeError("fps: start index " + std::to_string(start) +
                    " out of range (n = " + std::to_string(n) + ")");
  detail::check_finite_coords(cloud, "fps");

  SampleIndex out;
  out.start = start;
  out.indices.reserve(n_samples);
  out.indices.push_back(start);

  std::vector<Real> min_d2(n, std::numeric_limits<Real>::infinity());
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  std::uint32_t last = start;

  for (std::size_t s = 1; s < n_samples; ++s) {
    const Real* pl = cloud.point(last);
    Real best = Real(-1);
    std::uint32_t pick = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) {
        const Real d = detail::dist2(pl, cloud.point(i));
        if (d < min_d2[i]) min_d2[i] = d;
        if (min_d2[i] > best) {  // strict: ties keep the lowest index
          best = min_d2[i];
          pick = static_cast<std::uint32_t>(i);
        }
      }
    }
    out.indices.push_back(pick);
    taken[pick] = 1;
    last = pick;
  }
  return out;
}

// Builds the ScoreNet input vector for every (center, neighbor) pair.
//
//   full7: (xj-xi, yj-yi, zj-zi, xi, yi, zi, e)    e = |pj - pi|
//   x4:    (xj-xi, xj, xi, e)      and the y4/z4 analogues
//
// zero_absolute blanks the absolute-position slots, leaving only the
// translation-invariant entries (relative offsets and e).
template <class Real>
RelationTensor<Real> relation_features(const PointCloud<Real>& cloud,
                                       const NeighborIndex& nbrs,
                                       RelationMode mode,
                                       bool zero_absolute = false) {
  if (nbrs.n != cloud.n)
    throw InputError("relation_features: neighbor table has " +
                     std::to_string(nbrs.n) + " rows, cloud has " +
                     std::to_string(cloud.n));
  for (const std::uint32_t j : nbrs.indices)
    if (j >= cloud.n)
      throw InputError("relation_features: neighbor index " +
                       std::to_string(j) + " out of range");

  RelationTensor<Real> rel;
  rel.n = cloud.n;
  rel.k = nbrs.k;
  rel.d_in = relation_d_in(mode);
  rel.mode = mode;
  rel.values.resize(rel.n * rel.k * rel.d_in);

  const std::size_t axis =
      mode == RelationMode::kX4 ? 0 : (mode == RelationMode::kY4 ? 1 : 2);

  parallel_for(cloud.n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Real* pi = cloud.point(i);
      for (std::size_t j = 0; j < nbrs.k; ++j) {
        const Real* pj = cloud.point(nbrs.at(i, j));
        const Real dx = pj[0] - pi[0];
        const Real dy = pj[1] - pi[1];
        const Real dz = pj[2] - pi[2];
        const Real e = std::sqrt(dx * dx + dy * dy + dz * dz);
        Real* row = rel.values.data() + (i * rel.k + j) * rel.d_in;
        if (mode == RelationMode::kFull7) {
          row[0] = dx;
          row[1] = dy;
          row[2] = dz;
          row[3] = zero_absolute ? Real(0) : pi[0];
          row[4] = zero_absolute ? Real(0) : pi[1];
          row[5] = zero_absolute ? Real(0) : pi[2];
          row[6] = e;
        } else {
          row[0] = pj[axis] - pi[axis];
          row[1] = zero_absolute ? Real(0) : pj[axis];
          row[2] = zero_absolute ? Real(0) : pi[axis];
          row[3] = e;
        }
      }
    }
  });
  return rel;
}

// ---------------------------------------------------------------------------
// Point cloud file IO.
//
// CSV: one row per point, "x,y,z" or "x,y,z,f1,...,fC", no header line.
// Binary: 8-byte header (u32 n, u32 c_in, little-endian) followed by n*3
// float32 coordinates and n*c_in float32 features, both row-major.
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void append_real(std::string& s, Real v) {
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), static_cast<double>(v));
  s.append(buf, res.ptr);
}

inline double parse_real_field(const std::string& field, std::size_t line_no) {
  double v = 0;
  const char* b = field.data();
  const char* e = b + field.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  const char* tail = e;
  while (tail > b && (tail[-1] == ' ' || tail[-1] == '\t')) --tail;
  const auto res = std::from_chars(b, tail, v);
  if (res.ec != std::errc() || res.ptr != tail)
    throw ParseError("cloud csv: bad numeric field '" + field + "' on line " +
                     std::to_string(line_no));
  return v;
}

}  // namespace detail

template <class Real>
void save_cloud_csv(const PointCloud<Real>& cloud, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("save_cloud_csv: cannot open " + path);
  std::string line;
  for (std::size_t i = 0; i < cloud.n; ++i) {
    line.clear();
    const Real* p = cloud.point(i);
    for (int a = 0; a < 3; ++a) {
      if (a) line.push_back(',');
      detail::append_real(line, p[a]);
    }
    for (std::size_t c = 0; c < cloud.c_in; ++c) {
      line.push_back(',');
      detail::append_real(line, cloud.features[i * cloud.c_in + c]);
    }
    line.push_back('\n');
    f << line;
  }
  if (!f) throw InputError("save_cloud_csv: write failed for " + path);
}

template <class Real>
PointCloud<Real> load_cloud_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_cloud_csv: cannot open " + path);
  std::vector<Real> coords;
  std::vector<Real> feats;
  std::size_t c_in = 0;
  bool first = true;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() < 3)
      throw ParseError("cloud csv: line " + std::to_string(line_no) +
                       " has fewer than 3 columns");
    if (first) {
      c_in = fields.size() - 3;
      first = false;
    } else if (fields.size() != 3 + c_in) {
      throw ParseError("cloud csv: line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " columns, expected " +
                       std::to_string(3 + c_in));
    }
    for (std::size_t a = 0; a < 3; ++a)
      coords.push_back(
          static_cast<Real>(detail::parse_real_field(fields[a], line_no)));
    for (std::size_t c = 0; c < c_in; ++c)
      feats.push_back(
          static_cast<Real>(detail::parse_real_field(fields[3 + c], line_no)));
  }
  return PointCloud<Real>(std::move(coords), std::move(feats), c_in);
}

template <class Real>
void save_cloud_bin(const PointCloud<Real>& cloud, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("save_cloud_bin: cannot open " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(cloud.n);
  const std::uint32_t c = static_cast<std::uint32_t>(cloud.c_in);
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(reinterpret_cast<const char*>(&c), 4);
  auto write_f32 = [&f](const std::vector<Real>& v) {
    for (const Real x : v) {
      const float y = static_cast<float>(x);
      f.write(reinterpret_cast<const char*>(&y), 4);
    }
  };
  write_f32(cloud.coords);
  write_f32(cloud.features);
  if (!f) throw InputError("save_cloud_bin: write failed for " + path);
}

template <class Real>
PointCloud<Real> load_cloud_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_cloud_bin: cannot open " + path);
  std::uint32_t n = 0, c = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  f.read(reinterpret_cast<char*>(&c), 4);
  if (!f) throw ParseError("cloud bin: truncated header in " + path);
  const std::size_t total = std::size_t{n} * (3 + c);
  std::vector<float> raw(total);
  f.read(reinterpret_cast<char*>(raw.data()),
         static_cast<std::streamsize>(total * 4));
  if (static_cast<std::size_t>(f.gcount()) != total * 4)
    throw ParseError("cloud bin: truncated payload in " + path + " at byte " +
                     std::to_string(8 + static_cast<std::size_t>(f.gcount())));
  std::vector<Real> coords(raw.begin(), raw.begin() + std::size_t{n} * 3);
  std::vector<Real> feats(raw.begin() + std::size_t{n} * 3, raw.end());
  return PointCloud<Real>(std::move(coords), std::move(feats), c);
}

}  // namespace paconv
