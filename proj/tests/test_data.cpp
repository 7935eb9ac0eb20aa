#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hepa/data.hpp"
#include "hepa/errors.hpp"
#include "hepa/windows.hpp"

using namespace hepa;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / ("hepa_test_" + name);
  std::ofstream(path) << content;
  return path.string();
}

Episode episode_with_events(std::int64_t steps, std::vector<std::int64_t> events) {
  Episode ep;
  ep.id = "e";
  ep.steps = steps;
  ep.channels = 1;
  ep.values.assign(static_cast<std::size_t>(steps), 0.0f);
  ep.event_times = std::move(events);
  return ep;
}

}  // namespace

TEST_CASE("csv loading") {
  const auto path = temp_file("two.csv",
                              "episode_id,time,a,b,event\n"
                              "u1,0,1.0,5,0\n"
                              "u1,1,,6,1\n"
                              "u1,2,3.0,NaN,0\n"
                              "u2,0,nan,1,0\n"
                              "u2,1,2,2,1\n");
  LoadedCsv csv = load_csv(path);
  REQUIRE(csv.episodes.size() == 2);
  CHECK(csv.channels == std::vector<std::string>{"a", "b"});
  CHECK(csv.episodes[0].event_times == std::vector<std::int64_t>{1});
  CHECK(csv.episodes[1].event_times == std::vector<std::int64_t>{1});
  CHECK(csv.episodes[0].at(1, 0) == 1.0f);  // forward-filled
  CHECK(csv.episodes[0].at(2, 1) == 6.0f);
  CHECK(csv.episodes[1].at(0, 0) == 0.0f);  // nothing to carry forward
  CHECK(load_csv(path, {"b"}).channels == std::vector<std::string>{"b"});
}

TEST_CASE("csv errors carry line numbers") {
  auto line_of = [](const std::string& content) {
    try {
      load_csv(temp_file("bad.csv", content));
    } catch (const LoadError& e) {
      return static_cast<long>(e.line());
    }
    return -1L;
  };
  CHECK(line_of("") == 1);
  CHECK(line_of("episode_id,time,a,event\nu,0,x,0\n") == 2);
  CHECK(line_of("episode_id,time,a,event\nu,0,1,0\nu,0,1,0\n") == 3);
  CHECK(line_of("episode_id,time,a,event\nu,0,1,0\nv,0,1,0\nu,1,1,0\n") == 4);
  CHECK(line_of("episode_id,time,a,event\nu,0,1\n") == 2);
  CHECK(line_of("episode_id,time,a,event\nu,0,1,2\n") == 2);
  CHECK(line_of("episode_id,a,event\n") == 1);
  CHECK_THROWS_AS(load_csv(temp_file("ok.csv", "episode_id,time,a,event\nu,0,1,0\n"), {"zz"}), LoadError);
  CHECK_THROWS_AS(load_csv("/nonexistent/hepa.csv"), LoadError);
}

TEST_CASE("csv round trip") {
  SyntheticSpec syn;
  syn.n_episodes = 3;
  syn.channels = 2;
  syn.steps = 50;
  auto eps = generate_synthetic(syn);
  const auto path = (std::filesystem::temp_directory_path() / "hepa_test_roundtrip.csv").string();
  write_csv(path, {"x0", "x1"}, eps);
  LoadedCsv back = load_csv(path);
  REQUIRE(back.episodes.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(back.episodes[e].event_times == eps[e].event_times);
    for (std::size_t i = 0; i < eps[e].values.size(); ++i) REQUIRE(back.episodes[e].values[i] == eps[e].values[i]);
  }
}

TEST_CASE("constant channels dropped and statistics from train only") {
  const auto path = temp_file("const.csv",
                              "episode_id,time,a,flat,event\n"
                              "u1,0,1,7,0\nu1,1,3,7,1\n"
                              "u2,0,5,7,0\nu2,1,7,7,0\n"
                              "u3,0,100,9,0\nu3,1,200,9,1\n");
  DatasetSpec spec;
  spec.train_csv = path;
  spec.test_fraction = 0.34;
  Dataset ds = prepare_dataset(spec);
  CHECK(ds.channels == std::vector<std::string>{"a"});
  CHECK(ds.train.size() == 2);
  CHECK(ds.test.size() == 1);
  CHECK(ds.norm_offset[0] == 4.0);
  CHECK(ds.norm_scale[0] == doctest::Approx(std::sqrt(5.0)));

  spec.normalization = Normalization::MinMaxSubset;
  Dataset mm = prepare_dataset(spec);
  CHECK(mm.norm_offset[0] == 1.0);
  CHECK(mm.norm_scale[0] == 6.0);
  CHECK(mm.train[1].at(1, 0) == 1.0f);
  CHECK(parse_normalization(to_string(Normalization::MinMaxSubset)) == Normalization::MinMaxSubset);
}

TEST_CASE("label hand cases") {
  Episode ep = episode_with_events(121, {100});
  LabelRow r = build_labels(ep, 95, 10);
  CHECK(r.y[4] == 1);
  CHECK(r.y[3] == 0);
  for (auto v : build_labels(ep, 100, 10).y) CHECK(v == 0);

  Episode quiet = episode_with_events(121, {});
  LabelRow q = build_labels(quiet, 110, 15);
  for (int dt = 1; dt <= 15; ++dt) CHECK(q.mask[dt - 1] == (dt <= 10 ? 1 : 0));

  Episode engine = episode_with_events(174, {173});
  CHECK(build_labels(engine, 170, 5).y[3] == 1);
  CHECK(time_to_event(engine, 23, true, 125.0) == 125.0);
  CHECK(time_to_event(engine, 100, true, 125.0) == 73.0);
  CHECK(std::isnan(time_to_event(quiet, 5, false, std::nullopt)));
  CHECK(time_to_event(quiet, 5, true, std::nullopt) == 115.0);
}

TEST_CASE("labels match a brute-force scan") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::int64_t T = 2 + static_cast<std::int64_t>(rng() % 49);
    const int K = 1 + static_cast<int>(rng() % 20);
    std::vector<std::int64_t> events;
    for (std::int64_t t = 0; t < T; ++t)
      if (rng() % 7 == 0) events.push_back(t);
    Episode ep = episode_with_events(T, events);
    for (std::int64_t t = 0; t < T; ++t) {
      LabelRow r = build_labels(ep, t, K);
      for (int dt = 1; dt <= K; ++dt) {
        bool hit = false;
        for (auto e : events) hit = hit || (t < e && e <= t + dt);
        REQUIRE(r.y[dt - 1] == hit);
        REQUIRE(r.mask[dt - 1] == (hit || t + dt <= T - 1));
      }
    }
  }
}

TEST_CASE("anchor enumeration") {
  DatasetSpec spec;
  spec.context_len = 512;
  spec.stride = 1;
  auto anchors = anchor_times(episode_with_events(1000, {}), spec);
  // Enumeration: a full 512-step context ends at t >= 511 and a future step
  // exists for t <= 998, so 998 - 511 + 1 anchors.
  std::size_t expect = 0;
  for (std::int64_t t = 0; t < 1000; ++t) expect += t + 1 >= 512 && t + 1 <= 999;
  CHECK(expect == 488);
  CHECK(anchors.size() == expect);
  CHECK(anchors.front() == 511);
  CHECK(anchors.back() == 998);
  spec.stride = 1000;
  CHECK(anchor_times(episode_with_events(1000, {}), spec).size() <= 1);
  CHECK(anchor_times(episode_with_events(100, {}), spec).empty());

  DatasetSpec life;
  life.cycle_as_patch = true;
  life.stride = 1;
  life.max_tokens = 100;
  Episode engine = episode_with_events(174, {173});
  auto t = anchor_times(engine, life);
  CHECK(t.size() == 173);
  WindowPolicy policy = WindowPolicy::from_spec(life, 1);
  CHECK(context_tokens({&engine, 0}, policy).n_tokens == 1);
  CHECK(context_tokens({&engine, 50}, policy).n_tokens == 51);
  CHECK(context_tokens({&engine, 172}, policy).n_tokens == 100);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec syn;
  syn.n_episodes = 20;
  syn.steps = 300;
  auto a = generate_synthetic(syn), b = generate_synthetic(syn);
  for (std::size_t e = 0; e < a.size(); ++e) {
    REQUIRE(a[e].values == b[e].values);
    REQUIRE(a[e].event_times == b[e].event_times);
    CHECK(a[e].steps == 300);
    for (float v : a[e].values) REQUIRE(std::isfinite(v));
  }

  // Without a precursor the observations do not depend on the latent path.
  SyntheticSpec blind = syn;
  blind.beta = 0.0;
  SyntheticSpec blind_fast = blind;
  blind_fast.drift_lo = blind_fast.drift_hi = 0.05;
  auto c = generate_synthetic(blind), d = generate_synthetic(blind_fast);
  for (std::size_t e = 0; e < c.size(); ++e) REQUIRE(c[e].values == d[e].values);
  CHECK(c[0].event_times != d[0].event_times);

  SyntheticSpec life = syn;
  life.lifecycle = true;
  for (const auto& ep : generate_synthetic(life)) {
    REQUIRE(ep.event_times.size() == 1);
    CHECK(ep.event_times[0] == ep.steps - 1);
  }
}

TEST_CASE("synthetic event rate matches the hazard along the latent path") {
  SyntheticSpec syn;
  syn.n_episodes = 1000;
  syn.steps = 300;
  syn.seed = 5;
  const double theta = -std::log(syn.base_rate / (1 - syn.base_rate));
  double expected = 0, observed = 0;
  for (const auto& ep : generate_synthetic(syn)) {
    observed += static_cast<double>(ep.event_times.size());
    for (double z : ep.latent) expected += 1.0 / (1.0 + std::exp(-(syn.kappa * z - theta)));
  }
  CHECK(observed > 1000);
  CHECK(std::fabs(observed / expected - 1.0) < 0.2);
}

TEST_CASE("native C-MAPSS rows") {
  std::string text;
  for (int unit = 1; unit <= 2; ++unit) {
    for (int cycle = 1; cycle <= 3; ++cycle) {
      text += std::to_string(unit) + " " + std::to_string(cycle) + " 0.1 0.2 100";
      for (int s = 1; s <= 21; ++s) text += " " + std::to_string(s * 10 + cycle);
      text += "\n";
    }
  }
  const auto path = temp_file("fd.txt", text);
  auto eps = read_cmapss(path);
  REQUIRE(eps.size() == 2);
  CHECK(eps[1].id == "unit2");
  CHECK(eps[0].steps == 3);
  CHECK(eps[0].channels == 14);
  CHECK(eps[0].at(0, 0) == 21.0f);  // sensor 2 at cycle 1
  CHECK(eps[0].at(2, 13) == 213.0f);  // sensor 21 at cycle 3
  CHECK(eps[0].event_times == std::vector<std::int64_t>{2});
  CHECK(read_cmapss(path, {1}, false)[0].event_times.empty());
  CHECK_THROWS_AS(read_cmapss(temp_file("fd_bad.txt", "1 1 0 0 0 1 2\n")), LoadError);
  std::string gap = "1 2 0 0 0";
  for (int s = 1; s <= 21; ++s) gap += " 1";
  CHECK_THROWS_AS(read_cmapss(temp_file("fd_gap.txt", gap + "\n")), LoadError);  // starts at cycle 2
  CHECK_THROWS_AS(read_cmapss(path, {22}), ConfigError);
}
