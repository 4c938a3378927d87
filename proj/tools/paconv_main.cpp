// Command-line front end. Subcommands cover the fused/naive equivalence
// check, finite-difference gradient checking, closed-form cost accounting,
// toy-classifier training and evaluation, a robustness battery over input
// transforms, the bank-correlation descent study, and score-field dumps for
// plotting. One JSON config file feeds defaults; flags win over the file.
// Artifacts land under --out and are byte-identical across runs for a fixed
// (config, seed) pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "paconv/autograd.hpp"
#include "paconv/costmodel.hpp"
#include "paconv/error.hpp"
#include "paconv/exec.hpp"
#include "paconv/geometry.hpp"
#include "paconv/layer.hpp"
#include "paconv/modes.hpp"
#include "paconv/regularize.hpp"
#include "paconv/rng.hpp"
#include "paconv/scorenet.hpp"
#include "paconv/serialize.hpp"
#include "paconv/trainer.hpp"
#include "paconv/weight_bank.hpp"

namespace {

using paconv::json;

constexpr std::array<paconv::NormMode, 4> kAllNorms = {
    paconv::NormMode::kSoftmax, paconv::NormMode::kSigmoid,
    paconv::NormMode::kTanhClamped, paconv::NormMode::kNone};
constexpr std::array<paconv::AggMode, 3> kAllAggs = {
    paconv::AggMode::kMax, paconv::AggMode::kSum, paconv::AggMode::kAvg};
constexpr std::array<paconv::RelationMode, 4> kAllRelations = {
    paconv::RelationMode::kFull7, paconv::RelationMode::kX4,
    paconv::RelationMode::kY4, paconv::RelationMode::kZ4};

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 7;
  std::string precision = "double";
  int threads = 1;
  std::string out_dir = ".";
  bool config_given = false;
  bool seed_given = false;
  bool precision_given = false;
  bool threads_given = false;
  json cfg = json::object();
};

void load_config(GlobalOpts& g) {
  if (g.config_given) {
    g.cfg = paconv::load_json_file(g.config_path);
  } else if (std::filesystem::exists("configs/default.json")) {
    g.cfg = paconv::load_json_file("configs/default.json");
  }
  if (!g.cfg.is_object())
    throw paconv::InputError("config root must be a JSON object");
}

json section_of(const json& cfg, const char* name) {
  if (cfg.contains(name) && cfg.at(name).is_object()) return cfg.at(name);
  return json::object();
}

// Seed precedence: --seed flag, then the subcommand's config section, then
// the top-level config value, then the builtin.
std::uint64_t run_seed(const GlobalOpts& g, const json& sec) {
  if (g.seed_given) return g.seed;
  if (sec.contains("seed")) return sec.at("seed").get<std::uint64_t>();
  if (g.cfg.contains("seed")) return g.cfg.at("seed").get<std::uint64_t>();
  return 7;
}

template <class T>
T pick(const CLI::Option* opt, const T& flag_value, const json& sec,
       const char* key, const T& fallback) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  if (sec.contains(key)) return sec.at(key).get<T>();
  return fallback;
}

std::string out_path(const GlobalOpts& g, const std::string& name) {
  std::filesystem::create_directories(g.out_dir);
  return (std::filesystem::path(g.out_dir) / name).string();
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw paconv::InputError("cannot open " + path);
  f << body;
  if (!f) throw paconv::InputError("write failed for " + path);
}

paconv::PointCloud<float> to_single(const paconv::PointCloud<double>& c) {
  return paconv::PointCloud<float>(
      std::vector<float>(c.coords.begin(), c.coords.end()),
      std::vector<float>(c.features.begin(), c.features.end()), c.c_in);
}

paconv::PAConvLayer<float> to_single(const paconv::PAConvLayer<double>& l) {
  paconv::PAConvLayer<float> out;
  out.bank.values.assign(l.bank.values.begin(), l.bank.values.end());
  out.bank.m = l.bank.m;
  out.bank.c_in = l.bank.c_in;
  out.bank.c_out = l.bank.c_out;
  out.scorenet.norm = l.scorenet.norm;
  out.scorenet.d_in = l.scorenet.d_in;
  out.scorenet.m = l.scorenet.m;
  for (const paconv::AffineLayer<double>& al : l.scorenet.layers) {
    paconv::AffineLayer<float> fl;
    fl.w.assign(al.w.begin(), al.w.end());
    fl.b.assign(al.b.begin(), al.b.end());
    fl.in = al.in;
    fl.out = al.out;
    out.scorenet.layers.push_back(std::move(fl));
  }
  out.agg = l.agg;
  out.relation = l.relation;
  out.zero_absolute = l.zero_absolute;
  return out;
}

template <class Real>
double max_abs_diff(const std::vector<Real>& a, const std::vector<Real>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  return worst;
}

double bundle_diff(const paconv::GradientBundle<double>& a,
                   const paconv::GradientBundle<double>& b) {
  double worst = max_abs_diff(a.d_features, b.d_features);
  worst = std::max(worst, max_abs_diff(a.d_bank, b.d_bank));
  for (std::size_t l = 0; l < a.d_scorenet.size(); ++l) {
    worst = std::max(worst, max_abs_diff(a.d_scorenet[l].dw, b.d_scorenet[l].dw));
    worst = std::max(worst, max_abs_diff(a.d_scorenet[l].db, b.d_scorenet[l].db));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// equivalence
// ---------------------------------------------------------------------------

int cmd_equivalence(const GlobalOpts& g, const CLI::Option* opt_instances,
                    std::size_t instances_flag, bool inject_fault) {
  const json sec = section_of(g.cfg, "equivalence");
  const std::uint64_t seed = run_seed(g, sec);
  const std::size_t instances =
      pick<std::size_t>(opt_instances, instances_flag, sec, "instances", 50);
  if (instances < 1)
    throw paconv::InputError("equivalence: instances must be at least 1");

  constexpr double kFwdTolDouble = 1e-10;
  constexpr double kFwdTolSingle = 1e-6;
  constexpr double kBwdTolDouble = 1e-10;
  const std::vector<std::vector<std::size_t>> hiddens = {{8}, {6, 6}, {5}};

  double max_fwd_double = 0.0;
  double max_fwd_single = 0.0;
  double max_bwd_double = 0.0;
  json failures = json::array();

  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t inst_seed = paconv::mix_seed(seed, 7700 + i);
    paconv::Rng rng(inst_seed);
    const std::size_t n = 8 + rng.below(13);
    const std::size_t k_hi = std::min<std::size_t>(6, n - 1);
    const std::size_t k = 2 + rng.below(k_hi - 1);
    const std::size_t c_in = 2 + rng.below(6);
    const std::size_t c_out = 2 + rng.below(6);
    const std::size_t m = 2 + rng.below(7);
    const std::vector<std::size_t>& hidden = hiddens[i % hiddens.size()];
    const paconv::RelationMode relation = kAllRelations[i % kAllRelations.size()];
    const bool include_self = i % 2 == 0;

    std::vector<double> xyz(n * 3);
    for (double& v : xyz) v = rng.uniform(-1.0, 1.0);
    std::vector<double> feat(n * c_in);
    for (double& v : feat) v = rng.uniform(-0.5, 0.5);
    const paconv::PointCloud<double> cloud(std::move(xyz), std::move(feat),
                                           c_in);
    const paconv::NeighborIndex nbrs = paconv::knn_build(cloud, k, include_self);
    const paconv::PointCloud<float> cloud_f = to_single(cloud);

    std::uint64_t combo = 0;
    for (const paconv::NormMode norm : kAllNorms) {
      for (const paconv::AggMode agg : kAllAggs) {
        const paconv::PAConvLayer<double> layer =
            paconv::paconv_layer_init<double>(c_in, c_out, m, hidden, norm,
                                              agg, relation,
                                              paconv::mix_seed(inst_seed, combo));
        auto fwd_naive =
            paconv::paconv_forward(layer, cloud, nbrs, paconv::ForwardPath::kNaive);
        auto fwd_fused =
            paconv::paconv_forward(layer, cloud, nbrs, paconv::ForwardPath::kFused);
        if (inject_fault && i == 0 && combo == 0) fwd_fused.out[0] += 1e-3;
        const double fwd_d = max_abs_diff(fwd_naive.out, fwd_fused.out);

        const std::vector<double> ones(fwd_naive.out.size(), 1.0);
        const paconv::GradientBundle<double> grad_naive =
            paconv::paconv_backward(layer, fwd_naive.cache, ones);
        const paconv::GradientBundle<double> grad_fused =
            paconv::paconv_backward(layer, fwd_fused.cache, ones);
        const double bwd_d = bundle_diff(grad_naive, grad_fused);

        const paconv::PAConvLayer<float> layer_f = to_single(layer);
        const auto fwd_naive_f = paconv::paconv_forward(
            layer_f, cloud_f, nbrs, paconv::ForwardPath::kNaive);
        const auto fwd_fused_f = paconv::paconv_forward(
            layer_f, cloud_f, nbrs, paconv::ForwardPath::kFused);
        const double fwd_s = max_abs_diff(fwd_naive_f.out, fwd_fused_f.out);

        max_fwd_double = std::max(max_fwd_double, fwd_d);
        max_fwd_single = std::max(max_fwd_single, fwd_s);
        max_bwd_double = std::max(max_bwd_double, bwd_d);

        if (fwd_d >= kFwdTolDouble || fwd_s >= kFwdTolSingle ||
            bwd_d >= kBwdTolDouble) {
          json f;
          f["instance"] = i;
          f["seed"] = inst_seed;
          f["norm_mode"] = paconv::to_string(norm);
          f["agg_mode"] = paconv::to_string(agg);
          f["relation_mode"] = paconv::to_string(relation);
          f["forward_diff_double"] = fwd_d;
          f["forward_diff_single"] = fwd_s;
          f["backward_diff_double"] = bwd_d;
          failures.push_back(std::move(f));
        }
        ++combo;
      }
    }
  }

  const bool pass = failures.empty();
  json rep;
  rep["instances"] = instances;
  rep["seed"] = seed;
  rep["max_forward_diff_double"] = max_fwd_double;
  rep["max_forward_diff_single"] = max_fwd_single;
  rep["max_backward_diff_double"] = max_bwd_double;
  rep["tolerances"] = {{"forward_double", kFwdTolDouble},
                       {"forward_single", kFwdTolSingle},
                       {"backward_double", kBwdTolDouble}};
  rep["failures"] = failures;
  rep["pass"] = pass;
  paconv::save_json_file(rep, out_path(g, "equivalence.json"));

  std::printf(
      "equivalence: %zu instances, max diffs fwd double %.3e, fwd single "
      "%.3e, bwd double %.3e\n",
      instances, max_fwd_double, max_fwd_single, max_bwd_double);
  std::printf("equivalence: %s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

struct FlopsOpts {
  std::uint64_t n = 0, k = 0, m = 0, c_in = 0, c_out = 0;
  std::vector<std::uint64_t> hidden;
  std::string relation = "full7";
  std::vector<std::uint64_t> sweep_m;
  CLI::Option* opt_n = nullptr;
  CLI::Option* opt_k = nullptr;
  CLI::Option* opt_m = nullptr;
  CLI::Option* opt_c_in = nullptr;
  CLI::Option* opt_c_out = nullptr;
  CLI::Option* opt_hidden = nullptr;
  CLI::Option* opt_relation = nullptr;
};

int cmd_flops(const GlobalOpts& g, const FlopsOpts& o) {
  const json sec = section_of(g.cfg, "flops");
  const std::uint64_t n = pick<std::uint64_t>(o.opt_n, o.n, sec, "n", 4096);
  const std::uint64_t k = pick<std::uint64_t>(o.opt_k, o.k, sec, "k", 32);
  const std::uint64_t m = pick<std::uint64_t>(o.opt_m, o.m, sec, "m", 16);
  const std::uint64_t c_in =
      pick<std::uint64_t>(o.opt_c_in, o.c_in, sec, "c_in", 64);
  const std::uint64_t c_out =
      pick<std::uint64_t>(o.opt_c_out, o.c_out, sec, "c_out", 64);
  const std::vector<std::uint64_t> hidden = pick<std::vector<std::uint64_t>>(
      o.opt_hidden, o.hidden, sec, "hidden", {16, 16, 16});
  const std::string relation = pick<std::string>(
      o.opt_relation, o.relation, sec, "relation_mode", "full7");
  const std::uint64_t d_in =
      paconv::relation_d_in(paconv::parse_relation_mode(relation));
  for (const std::uint64_t v : {n, k, m, c_in, c_out})
    if (v < 1)
      throw paconv::InputError("flops: all dimensions must be at least 1");

  if (!o.sweep_m.empty()) {
    std::string csv =
        "m,naive_flops,fused_flops,naive_peak_elements,fused_peak_elements\n";
    for (const std::uint64_t mm : o.sweep_m) {
      if (mm < 1)
        throw paconv::InputError("flops: swept m must be at least 1");
      const paconv::CostModel nv =
          paconv::cost_model_naive(n, k, mm, c_in, c_out, d_in, hidden);
      const paconv::CostModel fu =
          paconv::cost_model_fused(n, k, mm, c_in, c_out, d_in, hidden);
      csv += std::to_string(mm) + ',' + std::to_string(nv.flops) + ',' +
             std::to_string(fu.flops) + ',' +
             std::to_string(nv.peak_elements) + ',' +
             std::to_string(fu.peak_elements) + '\n';
    }
    const std::string path = out_path(g, "flops_sweep.csv");
    write_text_file(path, csv);
    std::printf("flops: wrote %s (%zu values of m)\n", path.c_str(),
                o.sweep_m.size());
    return 0;
  }

  const paconv::CostModel nv =
      paconv::cost_model_naive(n, k, m, c_in, c_out, d_in, hidden);
  const paconv::CostModel fu =
      paconv::cost_model_fused(n, k, m, c_in, c_out, d_in, hidden);
  json rep;
  rep["n"] = n;
  rep["k"] = k;
  rep["m"] = m;
  rep["c_in"] = c_in;
  rep["c_out"] = c_out;
  rep["hidden"] = hidden;
  rep["relation_mode"] = relation;
  rep["naive"] = {{"flops", nv.flops}, {"peak_elements", nv.peak_elements}};
  rep["fused"] = {{"flops", fu.flops}, {"peak_elements", fu.peak_elements}};
  rep["peak_ratio"] = static_cast<double>(nv.peak_elements) /
                      static_cast<double>(fu.peak_elements);
  paconv::save_json_file(rep, out_path(g, "flops.json"));
  std::printf("flops: naive %llu madds, %llu peak elements\n",
              static_cast<unsigned long long>(nv.flops),
              static_cast<unsigned long long>(nv.peak_elements));
  std::printf("flops: fused %llu madds, %llu peak elements (peak ratio %.2f)\n",
              static_cast<unsigned long long>(fu.flops),
              static_cast<unsigned long long>(fu.peak_elements),
              rep["peak_ratio"].get<double>());
  return 0;
}

// ---------------------------------------------------------------------------
// scorefield
// ---------------------------------------------------------------------------

struct ScoreFieldSetup {
  paconv::ScoreNet<double> net;
  paconv::RelationMode relation = paconv::RelationMode::kFull7;
  bool zero_absolute = false;
};

ScoreFieldSetup load_scorefield_net(const GlobalOpts& g,
                                    const std::string& params_path,
                                    int which_layer) {
  ScoreFieldSetup s;
  if (!params_path.empty()) {
    const json j = paconv::load_json_file(params_path);
    const std::string fmt = j.is_object() ? j.value("format", "") : "";
    const paconv::PAConvLayer<double> layer = [&]() {
      if (fmt == "paconv-layer") return paconv::layer_from_json<double>(j);
      if (fmt == "paconv-toynet") {
        const paconv::ToyNetwork<double> net = paconv::toynet_from_json<double>(j);
        return which_layer == 2 ? net.layer2 : net.layer1;
      }
      throw paconv::ParseError("scorefield: " + params_path +
                               " holds neither a layer nor a toy network");
    }();
    s.net = layer.scorenet;
    s.relation = layer.relation;
    s.zero_absolute = layer.zero_absolute;
    return s;
  }
  const json sec = section_of(g.cfg, "network");
  const std::size_t m = sec.value("m", std::size_t{16});
  const std::vector<std::size_t> hidden =
      sec.contains("hidden")
          ? sec.at("hidden").get<std::vector<std::size_t>>()
          : std::vector<std::size_t>{16, 16, 16};
  const paconv::NormMode norm =
      paconv::parse_norm_mode(sec.value("norm_mode", std::string("softmax")));
  s.relation = paconv::parse_relation_mode(
      sec.value("relation_mode", std::string("full7")));
  s.zero_absolute = sec.value("zero_absolute", false);
  s.net = paconv::scorenet_init<double>(paconv::relation_d_in(s.relation),
                                        hidden, m, norm, 0);
  for (paconv::AffineLayer<double>& al : s.net.layers) {
    std::fill(al.w.begin(), al.w.end(), 0.0);
    std::fill(al.b.begin(), al.b.end(), 0.0);
  }
  return s;
}

// Grid cells run in raster order: the second plane axis is the outer loop,
// the first varies fastest. Column names stay x,y for every plane; they mean
// the two in-plane offsets.
void write_scorefield_csv(const ScoreFieldSetup& s,
                          const std::array<double, 3>& center, std::size_t res,
                          const std::string& plane, const std::string& path) {
  const std::size_t d_in = paconv::relation_d_in(s.relation);
  paconv::RelationTensor<double> rel;
  rel.n = res * res;
  rel.k = 1;
  rel.d_in = d_in;
  rel.mode = s.relation;
  rel.values.resize(rel.n * d_in);

  std::vector<double> us(rel.n), vs(rel.n);
  for (std::size_t bi = 0; bi < res; ++bi) {
    const double v =
        -1.0 + 2.0 * static_cast<double>(bi) / static_cast<double>(res - 1);
    for (std::size_t ai = 0; ai < res; ++ai) {
      const double u =
          -1.0 + 2.0 * static_cast<double>(ai) / static_cast<double>(res - 1);
      const std::size_t cell = bi * res + ai;
      double off[3] = {0.0, 0.0, 0.0};
      if (plane == "xy") {
        off[0] = u;
        off[1] = v;
      } else if (plane == "xz") {
        off[0] = u;
        off[2] = v;
      } else {
        off[1] = u;
        off[2] = v;
      }
      const double e =
          std::sqrt(off[0] * off[0] + off[1] * off[1] + off[2] * off[2]);
      double* row = rel.values.data() + cell * d_in;
      if (s.relation == paconv::RelationMode::kFull7) {
        row[0] = off[0];
        row[1] = off[1];
        row[2] = off[2];
        for (int a = 0; a < 3; ++a)
          row[3 + a] = s.zero_absolute ? 0.0 : center[static_cast<std::size_t>(a)];
        row[6] = e;
      } else {
        const std::size_t axis =
            s.relation == paconv::RelationMode::kX4
                ? 0
                : (s.relation == paconv::RelationMode::kY4 ? 1 : 2);
        row[0] = off[axis];
        row[1] = s.zero_absolute ? 0.0 : center[axis] + off[axis];
        row[2] = s.zero_absolute ? 0.0 : center[axis];
        row[3] = e;
      }
      us[cell] = u;
      vs[cell] = v;
    }
  }

  const paconv::ScoreForward<double> sf = paconv::scorenet_forward(s.net, rel);
  std::string csv = "x,y";
  for (std::size_t q = 1; q <= sf.m; ++q) csv += ",s_" + std::to_string(q);
  csv += '\n';
  for (std::size_t cell = 0; cell < rel.n; ++cell) {
    paconv::detail::append_real(csv, us[cell]);
    csv += ',';
    paconv::detail::append_real(csv, vs[cell]);
    for (std::size_t q = 0; q < sf.m; ++q) {
      csv += ',';
      paconv::detail::append_real(csv, sf.scores[cell * sf.m + q]);
    }
    csv += '\n';
  }
  write_text_file(path, csv);
}

struct ScoreFieldOpts {
  std::string params;
  int layer = 1;
  std::string plane = "all";
  std::size_t resolution = 64;
  std::vector<double> center;
  CLI::Option* opt_resolution = nullptr;
  CLI::Option* opt_center = nullptr;
};

int cmd_scorefield(const GlobalOpts& g, const ScoreFieldOpts& o) {
  const json sec = section_of(g.cfg, "scorefield");
  const std::size_t res =
      pick<std::size_t>(o.opt_resolution, o.resolution, sec, "resolution", 64);
  if (res < 2)
    throw paconv::InputError("scorefield: resolution must be at least 2");

  std::array<double, 3> center = {0.0, 0.0, 0.0};
  if (o.opt_center != nullptr && o.opt_center->count() > 0) {
    center = {o.center[0], o.center[1], o.center[2]};
  } else if (sec.contains("center")) {
    const std::vector<double> c = sec.at("center").get<std::vector<double>>();
    if (c.size() != 3)
      throw paconv::InputError("scorefield: center needs three coordinates");
    center = {c[0], c[1], c[2]};
  }

  const ScoreFieldSetup s = load_scorefield_net(g, o.params, o.layer);
  const std::vector<std::string> planes =
      o.plane == "all" ? std::vector<std::string>{"xy", "xz", "yz"}
                       : std::vector<std::string>{o.plane};
  for (const std::string& p : planes) {
    const std::string path = out_path(g, "scorefield_" + p + ".csv");
    write_scorefield_csv(s, center, res, p, path);
    std::printf("scorefield: wrote %s (%zux%zu grid, m=%zu)\n", path.c_str(),
                res, res, s.net.m);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradCheckOpts {
  std::size_t n = 12, k = 4, c_in = 5, c_out = 6, m = 8;
  std::vector<std::size_t> hidden;
  double eps = 1e-5;
  std::string path = "naive";
  std::string loss = "sum_squares";
  std::string relation = "full7";
  CLI::Option* opt_n = nullptr;
  CLI::Option* opt_k = nullptr;
  CLI::Option* opt_c_in = nullptr;
  CLI::Option* opt_c_out = nullptr;
  CLI::Option* opt_m = nullptr;
  CLI::Option* opt_hidden = nullptr;
  CLI::Option* opt_eps = nullptr;
  CLI::Option* opt_path = nullptr;
  CLI::Option* opt_loss = nullptr;
  CLI::Option* opt_relation = nullptr;
};

int cmd_gradcheck(const GlobalOpts& g, const GradCheckOpts& o) {
  if (g.precision != "double") {
    std::fprintf(stderr,
                 "error: gradcheck requires double precision; rerun with "
                 "--precision double\n");
    return 1;
  }
  const json sec = section_of(g.cfg, "gradcheck");
  const std::uint64_t seed = run_seed(g, sec);
  const std::size_t n = pick<std::size_t>(o.opt_n, o.n, sec, "n", 12);
  const std::size_t k = pick<std::size_t>(o.opt_k, o.k, sec, "k", 4);
  const std::size_t c_in = pick<std::size_t>(o.opt_c_in, o.c_in, sec, "c_in", 5);
  const std::size_t c_out =
      pick<std::size_t>(o.opt_c_out, o.c_out, sec, "c_out", 6);
  const std::size_t m = pick<std::size_t>(o.opt_m, o.m, sec, "m", 8);
  const std::vector<std::size_t> hidden = pick<std::vector<std::size_t>>(
      o.opt_hidden, o.hidden, sec, "hidden", {6});
  const double eps = pick<double>(o.opt_eps, o.eps, sec, "eps", 1e-5);
  const std::string path_s =
      pick<std::string>(o.opt_path, o.path, sec, "path", "naive");
  const std::string loss_s =
      pick<std::string>(o.opt_loss, o.loss, sec, "loss", "sum_squares");
  const std::string relation_s = pick<std::string>(
      o.opt_relation, o.relation, sec, "relation_mode", "full7");
  const paconv::ForwardPath path = path_s == "fused"
                                       ? paconv::ForwardPath::kFused
                                       : paconv::ForwardPath::kNaive;
  const paconv::LossKind loss =
      loss_s == "sum" ? paconv::LossKind::kSum : paconv::LossKind::kSumSquares;
  const paconv::RelationMode relation = paconv::parse_relation_mode(relation_s);
  constexpr double kTol = 1e-6;

  paconv::Rng rng(seed);
  std::vector<double> xyz(n * 3);
  for (double& v : xyz) v = rng.uniform(-1.0, 1.0);
  std::vector<double> feat(n * c_in);
  for (double& v : feat) v = rng.uniform(-0.5, 0.5);
  const paconv::PointCloud<double> cloud(std::move(xyz), std::move(feat), c_in);
  const paconv::NeighborIndex nbrs = paconv::knn_build(cloud, k, true);

  double worst = 0.0;
  std::size_t skipped = 0;
  json combos = json::array();
  std::uint64_t combo = 0;
  for (const paconv::NormMode norm : kAllNorms) {
    for (const paconv::AggMode agg : kAllAggs) {
      const paconv::PAConvLayer<double> layer =
          paconv::paconv_layer_init<double>(c_in, c_out, m, hidden, norm, agg,
                                            relation,
                                            paconv::mix_seed(seed, 100 + combo));
      const paconv::GradCheckReport rep =
          paconv::finite_diff_check(layer, cloud, nbrs, loss, eps, path);
      combos.push_back(paconv::gradcheck_report_to_json(rep));
      worst = std::max(worst, rep.max_rel_err);
      skipped += rep.skipped_total;
      std::printf("gradcheck: %-12s %-3s max_rel_err %.3e skipped %zu\n",
                  paconv::to_string(norm), paconv::to_string(agg),
                  rep.max_rel_err, rep.skipped_total);
      ++combo;
    }
  }

  const bool pass = worst < kTol;
  json rep;
  rep["seed"] = seed;
  rep["n"] = n;
  rep["k"] = k;
  rep["c_in"] = c_in;
  rep["c_out"] = c_out;
  rep["m"] = m;
  rep["hidden"] = hidden;
  rep["relation_mode"] = relation_s;
  rep["eps"] = eps;
  rep["loss"] = loss_s;
  rep["path"] = path_s;
  rep["tolerance"] = kTol;
  rep["max_rel_err"] = worst;
  rep["skipped_nonsmooth"] = skipped;
  rep["pass"] = pass;
  rep["combos"] = std::move(combos);
  paconv::save_json_file(rep, out_path(g, "gradcheck.json"));
  std::printf("gradcheck: overall max_rel_err %.3e (%s)\n", worst,
              pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train / evaluate / robustness
// ---------------------------------------------------------------------------

struct DatasetOpts {
  std::size_t per_class = 10;
  std::size_t points = 64;
  CLI::Option* opt_per_class = nullptr;
  CLI::Option* opt_points = nullptr;
};

struct DatasetSettings {
  std::size_t per_class = 10;
  std::size_t points = 64;
  std::uint64_t seed = 7;
};

DatasetSettings resolve_dataset(const GlobalOpts& g, const DatasetOpts& o) {
  const json dsec = section_of(g.cfg, "dataset");
  DatasetSettings s;
  s.per_class =
      pick<std::size_t>(o.opt_per_class, o.per_class, dsec, "n_per_class", 10);
  s.points = pick<std::size_t>(o.opt_points, o.points, dsec, "n_points", 64);
  s.seed = run_seed(g, dsec);
  return s;
}

paconv::ToyNetConfig resolve_network(const GlobalOpts& g,
                                     const CLI::Option* opt_m, std::size_t m,
                                     const CLI::Option* opt_k, std::size_t k) {
  const json nsec = section_of(g.cfg, "network");
  paconv::ToyNetConfig nc;
  nc.c1 = nsec.value("c1", nc.c1);
  nc.c2 = nsec.value("c2", nc.c2);
  nc.classes = nsec.value("classes", nc.classes);
  nc.m = pick<std::size_t>(opt_m, m, nsec, "m", nc.m);
  nc.k = pick<std::size_t>(opt_k, k, nsec, "k", nc.k);
  if (nsec.contains("hidden"))
    nc.hidden = nsec.at("hidden").get<std::vector<std::size_t>>();
  nc.norm =
      paconv::parse_norm_mode(nsec.value("norm_mode", std::string("softmax")));
  nc.agg = paconv::parse_agg_mode(nsec.value("agg_mode", std::string("max")));
  nc.relation = paconv::parse_relation_mode(
      nsec.value("relation_mode", std::string("full7")));
  nc.zero_absolute = nsec.value("zero_absolute", false);
  nc.center_input = nsec.value("center_input", false);
  return nc;
}

struct TrainOpts {
  std::size_t epochs = 200;
  double lr = 0.05;
  double lambda = 0.01;
  std::size_t m = 16, k = 8;
  DatasetOpts data;
  CLI::Option* opt_epochs = nullptr;
  CLI::Option* opt_lr = nullptr;
  CLI::Option* opt_lambda = nullptr;
  CLI::Option* opt_m = nullptr;
  CLI::Option* opt_k = nullptr;
};

template <class Real>
int run_train(const GlobalOpts& g, const DatasetSettings& data,
              const paconv::ToyNetConfig& nc, const paconv::TrainConfig& tc,
              std::uint64_t net_seed) {
  const paconv::SynthDataset<Real> ds = paconv::synth_dataset<Real>(
      data.per_class, data.points, paconv::mix_seed(data.seed, 0xd5));
  paconv::ToyNetwork<Real> net =
      paconv::toy_network_init<Real>(nc, paconv::mix_seed(net_seed, 0x226));
  const std::vector<paconv::EpochStats> hist = paconv::train(net, ds, tc);

  std::string csv = "epoch,loss,acc,l_corr,mean_pearson\n";
  for (const paconv::EpochStats& st : hist) {
    csv += std::to_string(st.epoch);
    csv += ',';
    paconv::detail::append_real(csv, st.loss);
    csv += ',';
    paconv::detail::append_real(csv, st.acc);
    csv += ',';
    paconv::detail::append_real(csv, st.l_corr);
    csv += ',';
    paconv::detail::append_real(csv, st.mean_abs_r);
    csv += '\n';
  }
  write_text_file(out_path(g, "metrics.csv"), csv);
  paconv::save_json_file(paconv::toynet_to_json(net),
                         out_path(g, "model.json"));

  const std::size_t stride = std::max<std::size_t>(1, hist.size() / 10);
  for (std::size_t i = 0; i < hist.size(); ++i) {
    if (i % stride == 0 || i + 1 == hist.size())
      std::printf("train: epoch %4zu loss %.4f acc %.3f l_corr %.4f\n",
                  hist[i].epoch, hist[i].loss, hist[i].acc, hist[i].l_corr);
  }
  return 0;
}

int cmd_train(const GlobalOpts& g, const TrainOpts& o) {
  const json tsec = section_of(g.cfg, "train");
  const DatasetSettings data = resolve_dataset(g, o.data);
  const paconv::ToyNetConfig nc =
      resolve_network(g, o.opt_m, o.m, o.opt_k, o.k);
  const std::uint64_t seed = run_seed(g, tsec);
  paconv::TrainConfig tc;
  tc.epochs = pick<std::size_t>(o.opt_epochs, o.epochs, tsec, "epochs", 200);
  tc.lr = pick<double>(o.opt_lr, o.lr, tsec, "lr", 0.05);
  tc.lambda_corr =
      pick<double>(o.opt_lambda, o.lambda, tsec, "lambda_corr", 0.01);
  tc.seed = seed;
  if (g.precision == "single") return run_train<float>(g, data, nc, tc, seed);
  return run_train<double>(g, data, nc, tc, seed);
}

struct EvalOpts {
  std::string model;
  std::string transform;
  DatasetOpts data;
};

template <class Real>
int run_evaluate(const GlobalOpts& g, const EvalOpts& o,
                 const DatasetSettings& data, std::uint64_t seed) {
  const paconv::SynthDataset<Real> ds = paconv::synth_dataset<Real>(
      data.per_class, data.points, paconv::mix_seed(data.seed, 0xd5));
  const paconv::ToyNetwork<Real> net =
      paconv::toynet_from_json<Real>(paconv::load_json_file(o.model));
  double acc = 0.0;
  std::string label = "none";
  if (o.transform.empty()) {
    acc = paconv::evaluate(net, ds, nullptr);
  } else {
    const paconv::Transform t =
        paconv::parse_transform(o.transform, paconv::mix_seed(seed, 0x7f));
    acc = paconv::evaluate(net, ds, &t);
    label = t.name();
  }
  json rep;
  rep["model"] = o.model;
  rep["transform"] = label;
  rep["accuracy"] = acc;
  rep["n_per_class"] = data.per_class;
  rep["n_points"] = data.points;
  rep["seed"] = data.seed;
  paconv::save_json_file(rep, out_path(g, "evaluate.json"));
  std::printf("evaluate: accuracy %.4f (transform %s)\n", acc, label.c_str());
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const EvalOpts& o) {
  const DatasetSettings data = resolve_dataset(g, o.data);
  const std::uint64_t seed = run_seed(g, section_of(g.cfg, "evaluate"));
  if (g.precision == "single") return run_evaluate<float>(g, o, data, seed);
  return run_evaluate<double>(g, o, data, seed);
}

struct RobustnessOpts {
  std::string model;
  std::vector<std::string> transforms;
  DatasetOpts data;
  CLI::Option* opt_transforms = nullptr;
};

template <class Real>
int run_robustness(const GlobalOpts& g, const RobustnessOpts& o,
                   const DatasetSettings& data,
                   const std::vector<std::string>& battery,
                   std::uint64_t seed) {
  const paconv::SynthDataset<Real> ds = paconv::synth_dataset<Real>(
      data.per_class, data.points, paconv::mix_seed(data.seed, 0xd5));
  const paconv::ToyNetwork<Real> net =
      paconv::toynet_from_json<Real>(paconv::load_json_file(o.model));

  const double base = paconv::evaluate(net, ds, nullptr);
  std::string csv = "transform,accuracy,delta\n";
  csv += "none,";
  paconv::detail::append_real(csv, base);
  csv += ',';
  paconv::detail::append_real(csv, 0.0);
  csv += '\n';
  std::printf("robustness: %-16s accuracy %.4f\n", "none", base);

  for (std::size_t idx = 0; idx < battery.size(); ++idx) {
    const paconv::Transform t =
        paconv::parse_transform(battery[idx], paconv::mix_seed(seed, 0x7f + idx));
    const double acc = paconv::evaluate(net, ds, &t);
    const std::string name = t.name();
    csv += name;
    csv += ',';
    paconv::detail::append_real(csv, acc);
    csv += ',';
    paconv::detail::append_real(csv, acc - base);
    csv += '\n';
    std::printf("robustness: %-16s accuracy %.4f delta %+.4f\n", name.c_str(),
                acc, acc - base);
  }
  write_text_file(out_path(g, "robustness.csv"), csv);
  return 0;
}

int cmd_robustness(const GlobalOpts& g, const RobustnessOpts& o) {
  const json sec = section_of(g.cfg, "robustness");
  const DatasetSettings data = resolve_dataset(g, o.data);
  const std::uint64_t seed = run_seed(g, sec);
  const std::vector<std::string> battery = pick<std::vector<std::string>>(
      o.opt_transforms, o.transforms, sec, "transforms",
      {"permute", "rotate_z:90", "rotate_z:180", "rotate_z:270",
       "translate:0.2", "translate:-0.2", "scale:0.8", "scale:1.2",
       "jitter:0.01"});
  if (g.precision == "single")
    return run_robustness<float>(g, o, data, battery, seed);
  return run_robustness<double>(g, o, data, battery, seed);
}

// ---------------------------------------------------------------------------
// corr-study
// ---------------------------------------------------------------------------

struct CorrStudyOpts {
  std::size_t m = 8, c_in = 8, c_out = 8, steps = 2000;
  double lr = 0.05;
  CLI::Option* opt_m = nullptr;
  CLI::Option* opt_c_in = nullptr;
  CLI::Option* opt_c_out = nullptr;
  CLI::Option* opt_steps = nullptr;
  CLI::Option* opt_lr = nullptr;
};

int cmd_corr_study(const GlobalOpts& g, const CorrStudyOpts& o) {
  const json sec = section_of(g.cfg, "corr_study");
  const std::uint64_t seed = run_seed(g, sec);
  const std::size_t m = pick<std::size_t>(o.opt_m, o.m, sec, "m", 8);
  const std::size_t c_in = pick<std::size_t>(o.opt_c_in, o.c_in, sec, "c_in", 8);
  const std::size_t c_out =
      pick<std::size_t>(o.opt_c_out, o.c_out, sec, "c_out", 8);
  const std::size_t steps =
      pick<std::size_t>(o.opt_steps, o.steps, sec, "steps", 2000);
  const double lr = pick<double>(o.opt_lr, o.lr, sec, "lr", 0.05);

  paconv::WeightBank<double> bank =
      paconv::weight_bank_init<double>(m, c_in, c_out, seed);
  const std::vector<paconv::CorrStep> hist =
      paconv::corr_descent(bank, steps, lr);

  std::string csv = "step,l_corr,mean_abs_r\n";
  for (const paconv::CorrStep& st : hist) {
    csv += std::to_string(st.step);
    csv += ',';
    paconv::detail::append_real(csv, st.loss);
    csv += ',';
    paconv::detail::append_real(csv, st.mean_abs_r);
    csv += '\n';
  }
  write_text_file(out_path(g, "corr_study.csv"), csv);

  json rep;
  rep["m"] = m;
  rep["c_in"] = c_in;
  rep["c_out"] = c_out;
  rep["steps"] = steps;
  rep["lr"] = lr;
  rep["seed"] = seed;
  rep["initial"] = {{"l_corr", hist.front().loss},
                    {"mean_abs_r", hist.front().mean_abs_r}};
  rep["final"] = paconv::corr_report_to_json(paconv::pearson_r_pairs(bank), m);
  paconv::save_json_file(rep, out_path(g, "corr_study.json"));
  std::printf("corr-study: mean_abs_r %.4f -> %.4f over %zu steps\n",
              hist.front().mean_abs_r, hist.back().mean_abs_r, steps);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalOpts g;
  CLI::App app{"position-adaptive point convolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  CLI::Option* opt_config = app.add_option(
      "--config", g.config_path,
      "JSON config file (configs/default.json is read when present)");
  CLI::Option* opt_seed =
      app.add_option("--seed", g.seed, "base seed, overrides the config");
  CLI::Option* opt_precision =
      app.add_option("--precision", g.precision, "floating-point width")
          ->check(CLI::IsMember({"single", "double"}));
  CLI::Option* opt_threads =
      app.add_option("--threads", g.threads, "worker thread count")
          ->check(CLI::PositiveNumber);
  app.add_option("--out", g.out_dir, "directory for output artifacts");

  CLI::App* eq = app.add_subcommand(
      "equivalence", "compare the fused path against the naive path");
  std::size_t eq_instances = 50;
  CLI::Option* eq_opt_instances =
      eq->add_option("--instances", eq_instances, "random instance count")
          ->check(CLI::PositiveNumber);
  bool eq_fault = false;
  eq->add_flag("--inject-fault", eq_fault,
               "perturb one fused output so the check must trip");

  CLI::App* fl = app.add_subcommand(
      "flops", "closed-form multiply-add and peak-memory accounting");
  FlopsOpts fo;
  fo.opt_n = fl->add_option("--n", fo.n, "point count")->check(CLI::PositiveNumber);
  fo.opt_k = fl->add_option("--k", fo.k, "neighbors per point")
                 ->check(CLI::PositiveNumber);
  fo.opt_m = fl->add_option("--m", fo.m, "weight matrices")
                 ->check(CLI::PositiveNumber);
  fo.opt_c_in = fl->add_option("--c-in", fo.c_in, "input channels")
                    ->check(CLI::PositiveNumber);
  fo.opt_c_out = fl->add_option("--c-out", fo.c_out, "output channels")
                     ->check(CLI::PositiveNumber);
  fo.opt_hidden =
      fl->add_option("--hidden", fo.hidden, "scorenet hidden widths")
          ->delimiter(',');
  fo.opt_relation =
      fl->add_option("--relation", fo.relation, "relation layout")
          ->check(CLI::IsMember({"full7", "x4", "y4", "z4"}));
  fl->add_option("--sweep-m", fo.sweep_m, "emit a CSV over these m values")
      ->delimiter(',');

  CLI::App* sf = app.add_subcommand(
      "scorefield", "dump scorenet score surfaces over plane grids");
  ScoreFieldOpts so;
  sf->add_option("--params", so.params,
                 "layer or toy-network JSON file; omit for an all-zero net");
  sf->add_option("--layer", so.layer, "which toy-network layer to read")
      ->check(CLI::Range(1, 2));
  sf->add_option("--plane", so.plane, "grid plane")
      ->check(CLI::IsMember({"xy", "xz", "yz", "all"}));
  so.opt_resolution =
      sf->add_option("--resolution", so.resolution, "grid size per axis");
  so.opt_center = sf->add_option("--center", so.center, "fixed center point")
                      ->delimiter(',')
                      ->expected(3);

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "analytic gradients against central finite differences");
  GradCheckOpts go;
  go.opt_n = gc->add_option("--n", go.n, "point count")->check(CLI::PositiveNumber);
  go.opt_k = gc->add_option("--k", go.k, "neighbors per point")
                 ->check(CLI::PositiveNumber);
  go.opt_c_in = gc->add_option("--c-in", go.c_in, "input channels")
                    ->check(CLI::PositiveNumber);
  go.opt_c_out = gc->add_option("--c-out", go.c_out, "output channels")
                     ->check(CLI::PositiveNumber);
  go.opt_m = gc->add_option("--m", go.m, "weight matrices")
                 ->check(CLI::PositiveNumber);
  go.opt_hidden =
      gc->add_option("--hidden", go.hidden, "scorenet hidden widths")
          ->delimiter(',');
  go.opt_eps = gc->add_option("--eps", go.eps, "finite-difference step");
  go.opt_path = gc->add_option("--path", go.path, "forward path under test")
                    ->check(CLI::IsMember({"naive", "fused"}));
  go.opt_loss = gc->add_option("--loss", go.loss, "scalar loss reduction")
                    ->check(CLI::IsMember({"sum", "sum_squares"}));
  go.opt_relation =
      gc->add_option("--relation", go.relation, "relation layout")
          ->check(CLI::IsMember({"full7", "x4", "y4", "z4"}));

  CLI::App* tr =
      app.add_subcommand("train", "fit the toy classifier on synthetic shapes");
  TrainOpts to;
  to.opt_epochs = tr->add_option("--epochs", to.epochs, "epoch count")
                      ->check(CLI::PositiveNumber);
  to.opt_lr = tr->add_option("--lr", to.lr, "SGD learning rate");
  to.opt_lambda =
      tr->add_option("--lambda", to.lambda, "correlation penalty weight");
  to.opt_m = tr->add_option("--m", to.m, "weight matrices per layer")
                 ->check(CLI::PositiveNumber);
  to.opt_k = tr->add_option("--k", to.k, "neighbors per point")
                 ->check(CLI::PositiveNumber);
  to.data.opt_per_class =
      tr->add_option("--per-class", to.data.per_class, "samples per class")
          ->check(CLI::PositiveNumber);
  to.data.opt_points =
      tr->add_option("--points", to.data.points, "points per cloud")
          ->check(CLI::PositiveNumber);

  CLI::App* ev = app.add_subcommand(
      "evaluate", "forward-only accuracy of a saved model");
  EvalOpts eo;
  ev->add_option("--model", eo.model, "toy-network JSON file")->required();
  ev->add_option("--transform", eo.transform,
                 "apply one transform to every sample, e.g. rotate_z:90");
  eo.data.opt_per_class =
      ev->add_option("--per-class", eo.data.per_class, "samples per class")
          ->check(CLI::PositiveNumber);
  eo.data.opt_points =
      ev->add_option("--points", eo.data.points, "points per cloud")
          ->check(CLI::PositiveNumber);

  CLI::App* rb = app.add_subcommand(
      "robustness", "accuracy deltas under a battery of input transforms");
  RobustnessOpts ro;
  rb->add_option("--model", ro.model, "toy-network JSON file")->required();
  ro.opt_transforms = rb->add_option("--transform", ro.transforms,
                                     "transform specs replacing the battery");
  ro.data.opt_per_class =
      rb->add_option("--per-class", ro.data.per_class, "samples per class")
          ->check(CLI::PositiveNumber);
  ro.data.opt_points =
      rb->add_option("--points", ro.data.points, "points per cloud")
          ->check(CLI::PositiveNumber);

  CLI::App* cs = app.add_subcommand(
      "corr-study", "gradient descent on the bank correlation loss alone");
  CorrStudyOpts co;
  co.opt_m = cs->add_option("--m", co.m, "weight matrices")
                 ->check(CLI::PositiveNumber);
  co.opt_c_in = cs->add_option("--c-in", co.c_in, "input channels")
                    ->check(CLI::PositiveNumber);
  co.opt_c_out = cs->add_option("--c-out", co.c_out, "output channels")
                     ->check(CLI::PositiveNumber);
  co.opt_steps = cs->add_option("--steps", co.steps, "descent steps")
                     ->check(CLI::PositiveNumber);
  co.opt_lr = cs->add_option("--lr", co.lr, "descent learning rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  g.config_given = opt_config->count() > 0;
  g.seed_given = opt_seed->count() > 0;
  g.precision_given = opt_precision->count() > 0;
  g.threads_given = opt_threads->count() > 0;

  try {
    load_config(g);
    if (!g.precision_given && g.cfg.contains("precision"))
      g.precision = g.cfg.at("precision").get<std::string>();
    if (g.precision != "single" && g.precision != "double")
      throw paconv::InputError("precision must be single or double");
    if (!g.threads_given && g.cfg.contains("threads"))
      g.threads = g.cfg.at("threads").get<int>();
    if (g.threads < 1)
      throw paconv::InputError("threads must be at least 1");
    paconv::set_num_threads(g.threads);

    if (*eq) return cmd_equivalence(g, eq_opt_instances, eq_instances, eq_fault);
    if (*fl) return cmd_flops(g, fo);
    if (*sf) return cmd_scorefield(g, so);
    if (*gc) return cmd_gradcheck(g, go);
    if (*tr) return cmd_train(g, to);
    if (*ev) return cmd_evaluate(g, eo);
    if (*rb) return cmd_robustness(g, ro);
    if (*cs) return cmd_corr_study(g, co);
  } catch (const paconv::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
