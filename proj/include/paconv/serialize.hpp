#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "paconv/autograd.hpp"
#include "paconv/error.hpp"
#include "paconv/layer.hpp"
#include "paconv/modes.hpp"
#include "paconv/regularize.hpp"
#include "paconv/trainer.hpp"

namespace paconv {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// JSON layer format. All value arrays are row-major and carry their shapes.
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
json real_array(const std::vector<Real>& v) {
  json arr = json::array();
  for (const Real x : v) arr.push_back(static_cast<double>(x));
  return arr;
}

template <class Real>
std::vector<Real> read_real_array(const json& arr, std::size_t expected,
                                  const std::string& what) {
  if (!arr.is_array() || arr.size() != expected)
    throw ParseError("layer params: " + what + " should hold " +
                     std::to_string(expected) + " numbers");
  std::vector<Real> v(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    if (!arr[i].is_number())
      throw ParseError("layer params: non-numeric entry in " + what);
    v[i] = static_cast<Real>(arr[i].get<double>());
  }
  return v;
}

inline void check_format(const json& j, const std::string& expect) {
  if (!j.is_object() || j.value("format", "") != expect)
    throw ParseError("params file: expected format '" + expect + "'");
  if (j.value("format_version", -1) != kFormatVersion)
    throw ParseError("params file: unsupported format_version");
}

}  // namespace detail

template <class Real>
json scorenet_to_json(const ScoreNet<Real>& net) {
  json j;
  j["d_in"] = net.d_in;
  j["m"] = net.m;
  j["norm_mode"] = to_string(net.norm);
  json layers = json::array();
  for (const AffineLayer<Real>& a : net.layers) {
    json l;
    l["in"] = a.in;
    l["out"] = a.out;
    l["w"] = detail::real_array(a.w);
    l["b"] = detail::real_array(a.b);
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  return j;
}

template <class Real>
ScoreNet<Real> scorenet_from_json(const json& j) {
  ScoreNet<Real> net;
  net.d_in = j.at("d_in").get<std::size_t>();
  net.m = j.at("m").get<std::size_t>();
  net.norm = parse_norm_mode(j.at("norm_mode").get<std::string>());
  std::size_t prev = net.d_in;
  for (const json& l : j.at("layers")) {
    AffineLayer<Real> a;
    a.in = l.at("in").get<std::size_t>();
    a.out = l.at("out").get<std::size_t>();
    if (a.in != prev)
      throw ParseError("layer params: affine widths do not chain");
    a.w = detail::read_real_array<Real>(l.at("w"), a.in * a.out, "w");
    a.b = detail::read_real_array<Real>(l.at("b"), a.out, "b");
    prev = a.out;
    net.layers.push_back(std::move(a));
  }
  if (net.layers.empty() || prev != net.m)
    throw ParseError("layer params: ScoreNet must end in m outputs");
  return net;
}

template <class Real>
json layer_to_json(const PAConvLayer<Real>& layer) {
  json j;
  j["format"] = "paconv-layer";
  j["format_version"] = kFormatVersion;
  j["c_in"] = layer.c_in();
  j["c_out"] = layer.c_out();
  j["m"] = layer.m();
  j["agg_mode"] = to_string(layer.agg);
  j["relation_mode"] = to_string(layer.relation);
  j["zero_absolute"] = layer.zero_absolute;
  j["scorenet"] = scorenet_to_json(layer.scorenet);
  json bank;
  bank["m"] = layer.bank.m;
  bank["c_in"] = layer.bank.c_in;
  bank["c_out"] = layer.bank.c_out;
  bank["values"] = detail::real_array(layer.bank.values);
  j["bank"] = std::move(bank);
  return j;
}

template <class Real>
PAConvLayer<Real> layer_from_json(const json& j) {
  detail::check_format(j, "paconv-layer");
  PAConvLayer<Real> layer;
  layer.agg = parse_agg_mode(j.at("agg_mode").get<std::string>());
  layer.relation = parse_relation_mode(j.at("relation_mode").get<std::string>());
  layer.zero_absolute = j.value("zero_absolute", false);
  layer.scorenet = scorenet_from_json<Real>(j.at("scorenet"));
  const json& bank = j.at("bank");
  layer.bank.m = bank.at("m").get<std::size_t>();
  layer.bank.c_in = bank.at("c_in").get<std::size_t>();
  layer.bank.c_out = bank.at("c_out").get<std::size_t>();
  layer.bank.values = detail::read_real_array<Real>(
      bank.at("values"),
      layer.bank.m * layer.bank.c_in * layer.bank.c_out, "bank values");
  if (layer.scorenet.m != layer.bank.m)
    throw ParseError("layer params: ScoreNet m and bank m disagree");
  if (layer.scorenet.d_in != relation_d_in(layer.relation))
    throw ParseError("layer params: ScoreNet d_in and relation mode disagree");
  return layer;
}

// ---------------------------------------------------------------------------
// Binary layer mirror: identical field order, little-endian, f64 values.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw ParseError("layer bin: truncated file " + path);
  return v;
}

template <class Real>
void put_reals(std::ofstream& f, const std::vector<Real>& v) {
  for (const Real x : v) {
    const double y = static_cast<double>(x);
    f.write(reinterpret_cast<const char*>(&y), 8);
  }
}

template <class Real>
std::vector<Real> get_reals(std::ifstream& f, std::size_t count,
                            const std::string& path) {
  std::vector<double> raw(count);
  f.read(reinterpret_cast<char*>(raw.data()),
         static_cast<std::streamsize>(count * 8));
  if (!f) throw ParseError("layer bin: truncated file " + path);
  return std::vector<Real>(raw.begin(), raw.end());
}

}  // namespace detail

template <class Real>
void save_layer_bin(const PAConvLayer<Real>& layer, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("save_layer_bin: cannot open " + path);
  f.write("PACV", 4);
  detail::put_u32(f, kFormatVersion);
  detail::put_u32(f, static_cast<std::uint32_t>(layer.c_in()));
  detail::put_u32(f, static_cast<std::uint32_t>(layer.c_out()));
  detail::put_u32(f, static_cast<std::uint32_t>(layer.m()));
  detail::put_u32(f, static_cast<std::uint32_t>(layer.agg));
  detail::put_u32(f, static_cast<std::uint32_t>(layer.scorenet.norm));
  detail::put_u32(f, static_cast<std::uint32_t>(layer.relation));
  detail::put_u32(f, layer.zero_absolute ? 1 : 0);
  detail::put_u32(f, static_cast<std::uint32_t>(layer.scorenet.layers.size()));
  for (const AffineLayer<Real>& a : layer.scorenet.layers) {
    detail::put_u32(f, static_cast<std::uint32_t>(a.in));
    detail::put_u32(f, static_cast<std::uint32_t>(a.out));
    detail::put_reals(f, a.w);
    detail::put_reals(f, a.b);
  }
  detail::put_reals(f, layer.bank.values);
  if (!f) throw InputError("save_layer_bin: write failed for " + path);
}

template <class Real>
PAConvLayer<Real> load_layer_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_layer_bin: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PACV", 4) != 0)
    throw ParseError("layer bin: bad magic in " + path);
  if (detail::get_u32(f, path) != kFormatVersion)
    throw ParseError("layer bin: unsupported format_version in " + path);
  PAConvLayer<Real> layer;
  const std::uint32_t c_in = detail::get_u32(f, path);
  const std::uint32_t c_out = detail::get_u32(f, path);
  const std::uint32_t m = detail::get_u32(f, path);
  layer.agg = static_cast<AggMode>(detail::get_u32(f, path));
  layer.scorenet.norm = static_cast<NormMode>(detail::get_u32(f, path));
  layer.relation = static_cast<RelationMode>(detail::get_u32(f, path));
  layer.zero_absolute = detail::get_u32(f, path) != 0;
  const std::uint32_t n_layers = detail::get_u32(f, path);
  layer.scorenet.d_in = relation_d_in(layer.relation);
  layer.scorenet.m = m;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    AffineLayer<Real> a;
    a.in = detail::get_u32(f, path);
    a.out = detail::get_u32(f, path);
    a.w = detail::get_reals<Real>(f, a.in * a.out, path);
    a.b = detail::get_reals<Real>(f, a.out, path);
    layer.scorenet.layers.push_back(std::move(a));
  }
  layer.bank.m = m;
  layer.bank.c_in = c_in;
  layer.bank.c_out = c_out;
  layer.bank.values =
      detail::get_reals<Real>(f, std::size_t{m} * c_in * c_out, path);
  return layer;
}

// ---------------------------------------------------------------------------
// Toy network model files.
// ---------------------------------------------------------------------------

template <class Real>
json toynet_to_json(const ToyNetwork<Real>& net) {
  json j;
  j["format"] = "paconv-toynet";
  j["format_version"] = kFormatVersion;
  const ToyNetConfig& cfg = net.config;
  json c;
  c["c1"] = cfg.c1;
  c["c2"] = cfg.c2;
  c["classes"] = cfg.classes;
  c["m"] = cfg.m;
  c["k"] = cfg.k;
  c["hidden"] = cfg.hidden;
  c["norm_mode"] = to_string(cfg.norm);
  c["agg_mode"] = to_string(cfg.agg);
  c["relation_mode"] = to_string(cfg.relation);
  c["zero_absolute"] = cfg.zero_absolute;
  c["center_input"] = cfg.center_input;
  j["config"] = std::move(c);
  j["layers"] = json::array({layer_to_json(net.layer1),
                             layer_to_json(net.layer2)});
  json head;
  head["w"] = detail::real_array(net.head_w);
  head["b"] = detail::real_array(net.head_b);
  j["head"] = std::move(head);
  return j;
}

template <class Real>
ToyNetwork<Real> toynet_from_json(const json& j) {
  detail::check_format(j, "paconv-toynet");
  ToyNetwork<Real> net;
  const json& c = j.at("config");
  net.config.c1 = c.at("c1").get<std::size_t>();
  net.config.c2 = c.at("c2").get<std::size_t>();
  net.config.classes = c.at("classes").get<std::size_t>();
  net.config.m = c.at("m").get<std::size_t>();
  net.config.k = c.at("k").get<std::size_t>();
  net.config.hidden = c.at("hidden").get<std::vector<std::size_t>>();
  net.config.norm = parse_norm_mode(c.at("norm_mode").get<std::string>());
  net.config.agg = parse_agg_mode(c.at("agg_mode").get<std::string>());
  net.config.relation =
      parse_relation_mode(c.at("relation_mode").get<std::string>());
  net.config.zero_absolute = c.value("zero_absolute", false);
  net.config.center_input = c.value("center_input", false);
  const json& layers = j.at("layers");
  if (!layers.is_array() || layers.size() != 2)
    throw ParseError("model file: expected exactly 2 layers");
  net.layer1 = layer_from_json<Real>(layers[0]);
  net.layer2 = layer_from_json<Real>(layers[1]);
  net.head_w = detail::read_real_array<Real>(
      j.at("head").at("w"), net.config.classes * net.config.c2, "head w");
  net.head_b = detail::read_real_array<Real>(j.at("head").at("b"),
                                             net.config.classes, "head b");
  return net;
}

// ---------------------------------------------------------------------------
// Report serialization.
// ---------------------------------------------------------------------------

inline json gradcheck_report_to_json(const GradCheckReport& rep) {
  json j;
  j["eps"] = rep.eps;
  j["loss"] = to_string(rep.loss);
  j["path"] = to_string(rep.path);
  j["norm_mode"] = to_string(rep.norm);
  j["agg_mode"] = to_string(rep.agg);
  j["max_rel_err"] = rep.max_rel_err;
  j["skipped_nonsmooth"] = rep.skipped_total;
  json blocks = json::array();
  for (const BlockCheck& b : rep.blocks) {
    json bj;
    bj["block"] = b.block;
    bj["max_rel_err"] = b.max_rel_err;
    bj["analytic_at_worst"] = b.analytic_at_worst;
    bj["numeric_at_worst"] = b.numeric_at_worst;
    bj["worst_index"] = b.worst_index;
    bj["checked"] = b.checked;
    bj["skipped_nonsmooth"] = b.skipped_nonsmooth;
    blocks.push_back(std::move(bj));
  }
  j["blocks"] = std::move(blocks);
  return j;
}

template <class Real>
json corr_report_to_json(const CorrReport<Real>& rep, std::size_t m) {
  json j;
  j["loss"] = rep.loss;
  j["mean_r"] = rep.mean_r;
  j["mean_abs_r"] = rep.mean_abs_r;
  j["degenerate"] = rep.degenerate;
  json rows = json::array();
  for (std::size_t i = 0; i < m; ++i) {
    json row = json::array();
    for (std::size_t q = 0; q < m; ++q) row.push_back(rep.pearson[i * m + q]);
    rows.push_back(std::move(row));
  }
  j["pearson"] = std::move(rows);
  return j;
}

// Parses JSON from a file, converting parser failures into ParseError with
// the byte offset preserved.
inline json load_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("parse error in " + path + " at byte " +
                     std::to_string(e.byte) + ": " + e.what());
  }
}

inline void save_json_file(const json& j, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path);
  f << j.dump(2) << '\n';
  if (!f) throw InputError("write failed for " + path);
}

}  // namespace paconv
