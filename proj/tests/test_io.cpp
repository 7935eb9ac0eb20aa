#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hepa/config.hpp"
#include "hepa/errors.hpp"
#include "hepa/io.hpp"

using namespace hepa;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hepa_test_" + name)).string();
}

NetworkConfig small_net() {
  NetworkConfig c;
  c.d_in = 6;
  c.d_model = 16;
  c.heads = 2;
  c.ffn = 32;
  c.K = 12;
  return c;
}

ProbabilitySurface small_surface() {
  ProbabilitySurface s;
  s.K = 3;
  s.dataset = "demo set";
  s.seed = 7;
  s.rows.push_back({"a", 10, {0.1, 0.2, 0.223456789123}, {0, 1, 1}, {1, 1, 1}});
  s.rows.push_back({"b", 4, {0.0, 0.5, 1.0}, {0, 0, 0}, {1, 1, 0}});
  return s;
}

long load_error_line(const std::string& content) {
  const auto path = temp_path("surface_bad.csv");
  std::ofstream(path) << content;
  try {
    read_surface(path);
  } catch (const LoadError& e) {
    return static_cast<long>(e.line());
  }
  return -1;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  HepaModel m(small_net(), 3);
  const auto path = temp_path("model.ckpt");
  save_checkpoint(path, m, {{"epoch", 4}});
  Checkpoint back = load_checkpoint(path);
  CHECK(back.meta["epoch"] == 4);
  CHECK(back.model.config.d_model == 16);
  CHECK(back.model.config.K == 12);
  auto a = m.parameters(), b = back.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    REQUIRE(a[i].second.shape() == b[i].second.shape());
    CHECK(std::memcmp(a[i].second.values().data(), b[i].second.values().data(),
                      a[i].second.values().size() * sizeof(float)) == 0);
  }
}

TEST_CASE("checkpoint rejects unknown versions and damaged files") {
  HepaModel m(small_net(), 3);
  const auto path = temp_path("model_v.ckpt");
  save_checkpoint(path, m);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version 2"), LoadError);

  save_checkpoint(path, m);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  std::ofstream(temp_path("junk.ckpt")) << "not a model";
  CHECK_THROWS_AS(load_checkpoint(temp_path("junk.ckpt")), LoadError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), LoadError);
}

TEST_CASE("config hash is stable and content sensitive") {
  nlohmann::json a = {{"x", 1}, {"y", {1, 2}}};
  nlohmann::json b = nlohmann::json::parse(R"({"y":[1,2],"x":1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b["x"] = 2;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("surface file round trip") {
  auto s = small_surface();
  const auto path = temp_path("surface.csv");
  write_surface(path, s);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "HEPA-SURFACE v1, K=3, dataset=demo set, seed=7");
  auto back = read_surface(path);
  CHECK(back.K == 3);
  CHECK(back.dataset == "demo set");
  CHECK(back.seed == 7);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].episode == "a");
  CHECK(back.rows[0].t == 10);
  CHECK(back.rows[0].p[2] == doctest::Approx(0.223456789).epsilon(1e-12));
  CHECK(back.rows[1].mask == std::vector<std::uint8_t>{1, 1, 0});
  CHECK(back.rows[0].y == s.rows[0].y);
}

TEST_CASE("malformed surface files report the line") {
  const std::string head = "HEPA-SURFACE v1, K=2, dataset=d, seed=0\nepisode,t,dt,p,y,mask\n";
  CHECK(load_error_line("garbage\n") == 1);
  CHECK(load_error_line("HEPA-SURFACE v1, K=2, dataset=d, seed=0\nwrong\n") == 2);
  CHECK(load_error_line(head + "a,0,1,0.1,0,1\na,0,2,0.2,0,1,9\n") == 4);
  CHECK(load_error_line(head + "a,0,1,0.1,0,1\na,0,2,abc,0,1\n") == 4);
  CHECK(load_error_line(head + "a,0,1,1.5,0,1\n") == 3);
  CHECK(load_error_line(head + "a,0,2,0.1,0,1\n") == 3);
  CHECK(load_error_line(head + "a,0,1,0.1,0,1\na,0,2,0.2,2,1\n") == 4);
  CHECK(load_error_line(head + "a,0,1,0.1,0,1\na,0,2,0.2,0,1\nb,0,1,0.1,0,1\n") == 5);
  // Structurally fine but p decreases in dt: a semantic error without a line.
  CHECK(load_error_line(head + "a,0,1,0.3,0,1\na,0,2,0.2,0,1\n") == 0);
  CHECK(load_error_line(head + "a,0,1,0.1,0,1\na,0,2,0.2,0,1\n") == -1);
}

TEST_CASE("metric report and horizon artifacts") {
  auto s = small_surface();
  MetricReport r = evaluate_surface(s, {});
  nlohmann::json j = to_json(r);
  for (const char* key : {"h_auroc", "per_horizon_auroc", "f1", "pa_f1", "ece", "brier", "reliability",
                          "resolution", "uncertainty", "n_valid_horizons"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["per_horizon_auroc"].size() == 3);

  const auto csv = temp_path("horizons.csv");
  write_horizon_csv(csv, r.per_horizon);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "dt,auroc,prevalence,n");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);

  std::vector<HorizonStat> stats{{1, 0.7, 0.1, 10}, {2, std::nullopt, 0.0, 10}, {3, 0.8, 0.2, 10}, {4, 0.9, 0.3, 10}};
  const std::string svg = horizon_svg(stats, "t");
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t lines = 0;
  for (auto at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("run config parsing") {
  auto j = nlohmann::json::parse(R"({
    "dataset": {"name": "x", "train_csv": "a/train.csv", "K": 40, "normalization": "minmax_subset",
                "synthetic": {"n_episodes": 7, "beta": 0.0}},
    "network": {"d_model": 32, "heads": 2},
    "pretrain": {"alpha": 0.0, "snapshot_epochs": [2]},
    "finetune": {"mode": "probe", "predictor_init": "random"},
    "seeds": [4]
  })");
  RunConfig rc = parse_run_config(j, "/cfg", "");
  CHECK(rc.dataset.train_csv == "/cfg/a/train.csv");
  CHECK(rc.dataset.K == 40);
  CHECK(rc.network.K == 40);
  CHECK(rc.network.d_model == 32);
  CHECK(rc.dataset.normalization == Normalization::MinMaxSubset);
  REQUIRE(rc.dataset.synthetic.has_value());
  CHECK(rc.dataset.synthetic->n_episodes == 7);
  CHECK(rc.dataset.synthetic->beta == 0.0);
  CHECK(rc.pretrain.alpha == 0.0f);
  CHECK(rc.pretrain.snapshot_epochs == std::vector<int>{2});
  CHECK(rc.finetune.mode == FinetuneMode::Probe);
  CHECK(rc.finetune.predictor_init == PredictorInit::Random);
  CHECK(rc.seeds == std::vector<std::uint64_t>{4});
  CHECK(parse_run_config(j, "/cfg", "/data").dataset.train_csv == "/data/a/train.csv");

  CHECK_THROWS_AS(parse_run_config({{"network", {{"d_modle", 3}}}}, "", ""), ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"network", {{"heads", "four"}}}}, "", ""), ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"finetune", {{"mode", "nope"}}}}, "", ""), ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"fractions", {0.0}}}, "", ""), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent.json", ""), ConfigError);

  DatasetSpec spec;
  spec.patch = 16;
  CHECK(token_width(spec, 14) == 224);
  spec.cycle_as_patch = true;
  CHECK(token_width(spec, 14) == 14);
}
