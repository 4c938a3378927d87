#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "oracles.hpp"
#include "paconv/serialize.hpp"

using namespace paconv;

namespace {

std::string temp_path(const char* stem) {
  const auto dir = std::filesystem::temp_directory_path();
  return (dir / (std::string("paconv_test_") + stem)).string();
}

struct TempFile {
  std::string path;
  explicit TempFile(const char* stem) : path(temp_path(stem)) {}
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

template <class Real>
PAConvLayer<Real> sample_layer(std::uint64_t seed) {
  return paconv_layer_init<Real>(5, 7, 4, {16, 16}, NormMode::kSoftmax,
                                 AggMode::kMax, RelationMode::kFull7, seed);
}

template <class Real>
bool layers_equal(const PAConvLayer<Real>& a, const PAConvLayer<Real>& b) {
  if (a.agg != b.agg || a.relation != b.relation ||
      a.zero_absolute != b.zero_absolute)
    return false;
  if (a.bank.m != b.bank.m || a.bank.c_in != b.bank.c_in ||
      a.bank.c_out != b.bank.c_out || a.bank.values != b.bank.values)
    return false;
  if (a.scorenet.d_in != b.scorenet.d_in || a.scorenet.m != b.scorenet.m ||
      a.scorenet.norm != b.scorenet.norm ||
      a.scorenet.layers.size() != b.scorenet.layers.size())
    return false;
  for (std::size_t l = 0; l < a.scorenet.layers.size(); ++l) {
    const auto& la = a.scorenet.layers[l];
    const auto& lb = b.scorenet.layers[l];
    if (la.in != lb.in || la.out != lb.out || la.w != lb.w || la.b != lb.b)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("layer survives a JSON round trip through text") {
  const auto layer = sample_layer<double>(7001);
  const std::string text = layer_to_json(layer).dump();
  const auto back = layer_from_json<double>(json::parse(text));
  CHECK(layers_equal(layer, back));

  Rng rng(7002);
  const auto cloud = oracle::random_cloud<double>(rng, 20, 5);
  const auto nb = knn_build(cloud, 6, true);
  const auto a = paconv_forward(layer, cloud, nb, ForwardPath::kFused);
  const auto b = paconv_forward(back, cloud, nb, ForwardPath::kFused);
  CHECK(a.out == b.out);
}

TEST_CASE("layer survives a binary round trip") {
  auto layer = sample_layer<double>(7003);
  layer.zero_absolute = true;
  TempFile file("layer_roundtrip.bin");
  save_layer_bin(layer, file.path);
  const auto back = load_layer_bin<double>(file.path);
  CHECK(layers_equal(layer, back));

  Rng rng(7004);
  const auto cloud = oracle::random_cloud<double>(rng, 18, 5);
  const auto nb = knn_build(cloud, 5, false);
  const auto a = paconv_forward(layer, cloud, nb, ForwardPath::kNaive);
  const auto b = paconv_forward(back, cloud, nb, ForwardPath::kNaive);
  CHECK(a.out == b.out);
}

TEST_CASE("float layer params survive the f64 binary container") {
  const auto layer = paconv_layer_init<float>(3, 4, 6, {8}, NormMode::kNone,
                                              AggMode::kAvg, RelationMode::kX4,
                                              7005);
  TempFile file("layer_roundtrip_f32.bin");
  save_layer_bin(layer, file.path);
  const auto back = load_layer_bin<float>(file.path);
  CHECK(layers_equal(layer, back));
}

TEST_CASE("layer JSON rejects bad format markers") {
  const auto layer = sample_layer<double>(7006);
  json j = layer_to_json(layer);

  json wrong_format = j;
  wrong_format["format"] = "something-else";
  CHECK_THROWS_AS(layer_from_json<double>(wrong_format), ParseError);

  json missing_format = j;
  missing_format.erase("format");
  CHECK_THROWS_AS(layer_from_json<double>(missing_format), ParseError);

  json wrong_version = j;
  wrong_version["format_version"] = kFormatVersion + 1;
  CHECK_THROWS_AS(layer_from_json<double>(wrong_version), ParseError);

  CHECK_THROWS_AS(layer_from_json<double>(json::array()), ParseError);
}

TEST_CASE("layer JSON rejects inconsistent shapes") {
  const auto layer = sample_layer<double>(7007);
  const json j = layer_to_json(layer);

  json broken_chain = j;
  broken_chain["scorenet"]["layers"][1]["in"] = 17;
  CHECK_THROWS_AS(layer_from_json<double>(broken_chain), ParseError);

  json wrong_tail = j;
  wrong_tail["scorenet"]["m"] = 5;
  CHECK_THROWS_AS(layer_from_json<double>(wrong_tail), ParseError);

  json short_w = j;
  short_w["scorenet"]["layers"][0]["w"].erase(0);
  CHECK_THROWS_AS(layer_from_json<double>(short_w), ParseError);

  json text_entry = j;
  text_entry["bank"]["values"][3] = "oops";
  CHECK_THROWS_AS(layer_from_json<double>(text_entry), ParseError);

  json bank_m = j;
  bank_m["bank"]["m"] = layer.m() + 1;
  for (std::size_t i = 0; i < layer.c_in() * layer.c_out(); ++i)
    bank_m["bank"]["values"].push_back(0.0);
  CHECK_THROWS_AS(layer_from_json<double>(bank_m), ParseError);

  json wrong_relation = j;
  wrong_relation["relation_mode"] = "x4";
  CHECK_THROWS_AS(layer_from_json<double>(wrong_relation), ParseError);
}

TEST_CASE("binary loader rejects junk and truncation") {
  TempFile junk("layer_junk.bin");
  {
    std::ofstream f(junk.path, std::ios::binary);
    f << "JUNKJUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(load_layer_bin<double>(junk.path), ParseError);

  const auto layer = sample_layer<double>(7008);
  TempFile whole("layer_whole.bin");
  save_layer_bin(layer, whole.path);
  TempFile cut("layer_cut.bin");
  {
    std::ifstream in(whole.path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() > 64);
    std::ofstream out(cut.path, std::ios::binary);
    out.write(bytes.data(), 64);
  }
  CHECK_THROWS_AS(load_layer_bin<double>(cut.path), ParseError);

  CHECK_THROWS_AS(load_layer_bin<double>(temp_path("no_such_file.bin")),
                  InputError);
}

TEST_CASE("toy network survives a JSON file round trip") {
  ToyNetConfig cfg;
  cfg.c1 = 6;
  cfg.c2 = 8;
  cfg.m = 4;
  cfg.k = 5;
  cfg.hidden = {10, 10};
  cfg.zero_absolute = true;
  cfg.center_input = true;
  const auto net = toy_network_init<double>(cfg, 7009);

  TempFile file("toynet_roundtrip.json");
  save_json_file(toynet_to_json(net), file.path);
  const auto back = toynet_from_json<double>(load_json_file(file.path));

  CHECK(back.config.c1 == cfg.c1);
  CHECK(back.config.c2 == cfg.c2);
  CHECK(back.config.hidden == cfg.hidden);
  CHECK(back.config.zero_absolute == cfg.zero_absolute);
  CHECK(back.config.center_input == cfg.center_input);
  CHECK(layers_equal(net.layer1, back.layer1));
  CHECK(layers_equal(net.layer2, back.layer2));
  CHECK(net.head_w == back.head_w);
  CHECK(net.head_b == back.head_b);

  const auto ds = synth_dataset<double>(1, 24, 7010);
  for (const auto& sample : ds.samples) {
    const auto a = toy_forward(net, sample.cloud);
    const auto b = toy_forward(back, sample.cloud);
    CHECK(a == b);
  }
}

TEST_CASE("toy network JSON must hold exactly two layers") {
  ToyNetConfig cfg;
  cfg.c1 = 4;
  cfg.c2 = 4;
  cfg.m = 2;
  cfg.k = 4;
  cfg.hidden = {6};
  const auto net = toy_network_init<double>(cfg, 7011);
  json j = toynet_to_json(net);
  j["layers"].erase(1);
  CHECK_THROWS_AS(toynet_from_json<double>(j), ParseError);
}

TEST_CASE("JSON file loader reports the failing byte offset") {
  TempFile file("broken.json");
  {
    std::ofstream f(file.path, std::ios::binary);
    f << "{ \"a\": }";
  }
  try {
    load_json_file(file.path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("at byte") != std::string::npos);
  }
  CHECK_THROWS_AS(load_json_file(temp_path("no_such_file.json")), InputError);
}

TEST_CASE("gradient check report serializes every block") {
  Rng rng(7012);
  const auto layer = paconv_layer_init<double>(3, 4, 2, {6}, NormMode::kSoftmax,
                                               AggMode::kSum,
                                               RelationMode::kFull7, 7013);
  const auto cloud = oracle::random_cloud<double>(rng, 8, 3);
  const auto nb = knn_build(cloud, 3, true);
  const auto rep =
      finite_diff_check(layer, cloud, nb, LossKind::kSumSquares, 1e-5);

  const json j = gradcheck_report_to_json(rep);
  CHECK(j.at("eps").get<double>() == 1e-5);
  CHECK(j.at("loss").get<std::string>() == "sum_squares");
  CHECK(j.at("path").get<std::string>() == "naive");
  CHECK(j.at("norm_mode").get<std::string>() == "softmax");
  CHECK(j.at("agg_mode").get<std::string>() == "sum");
  CHECK(j.at("max_rel_err").get<double>() >= 0.0);
  CHECK(j.contains("skipped_nonsmooth"));
  REQUIRE(j.at("blocks").is_array());
  CHECK(j.at("blocks").size() == rep.blocks.size());
  for (const json& b : j.at("blocks")) {
    CHECK(b.contains("block"));
    CHECK(b.contains("max_rel_err"));
    CHECK(b.contains("checked"));
    CHECK(b.contains("skipped_nonsmooth"));
  }
}

TEST_CASE("correlation report serializes the full matrix") {
  const auto bank = weight_bank_init<double>(3, 4, 4, 7014);
  const auto rep = pearson_r_pairs(bank);
  const json j = corr_report_to_json(rep, bank.m);
  CHECK(j.at("loss").get<double>() == rep.loss);
  CHECK(j.at("mean_abs_r").get<double>() == rep.mean_abs_r);
  CHECK(j.at("degenerate").get<bool>() == rep.degenerate);
  REQUIRE(j.at("pearson").size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(j.at("pearson")[i].size() == 3);
    CHECK(j.at("pearson")[i][i].get<double>() == 1.0);
  }
}
