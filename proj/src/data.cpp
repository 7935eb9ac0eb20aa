#include "hepa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "hepa/errors.hpp"

namespace hepa {

namespace {

constexpr double kConstantVariance = 1e-8;

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t\r");
    const auto e = c.find_last_not_of(" \t\r");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return cells;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA" || cell == "null";
}

double parse_number(const std::string& cell, const std::string& column, std::size_t line) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw LoadError("non-numeric value '" + cell + "' in column '" + column + "'", line);
  }
  return v;
}

template <class Fn>
void for_each_train_value(const Dataset& ds, std::size_t s, Fn fn) {
  for (const auto& ep : ds.train)
    for (std::int64_t t = 0; t < ep.steps; ++t) fn(static_cast<double>(ep.at(t, static_cast<std::int64_t>(s))));
}

void split_off_test(std::vector<Episode>& all, double fraction, Dataset& ds) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("test_fraction must be in [0, 1)");
  const auto n = all.size();
  auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n_test == 0 && n >= 2) n_test = 1;
  for (std::size_t i = 0; i < n; ++i) {
    Episode& ep = all[i];
    ep.split = i + n_test >= n ? "test" : "train";
    (ep.split == "test" ? ds.test : ds.train).push_back(std::move(ep));
  }
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

LoadedCsv load_csv(const std::string& path, const std::vector<std::string>& wanted_channels) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || split_line(line).empty()) throw LoadError("empty file '" + path + "'", 1);
  const auto header = split_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) throw LoadError("duplicate column '" + header[i] + "'", 1);
  }
  for (const char* key : {"episode_id", "time", "event"}) {
    if (!col.count(key)) throw LoadError(std::string("missing required column '") + key + "'", 1);
  }
  LoadedCsv out;
  if (wanted_channels.empty()) {
    for (const auto& h : header)
      if (h != "episode_id" && h != "time" && h != "event") out.channels.push_back(h);
  } else {
    for (const auto& c : wanted_channels) {
      if (!col.count(c)) throw LoadError("unknown column '" + c + "' requested by the dataset spec", 1);
      out.channels.push_back(c);
    }
  }
  const auto S = static_cast<std::int64_t>(out.channels.size());
  if (S == 0) throw LoadError("no channel columns in '" + path + "'", 1);
  std::vector<std::size_t> channel_col;
  for (const auto& c : out.channels) channel_col.push_back(col.at(c));

  std::vector<std::string> seen_ids;
  std::vector<std::vector<double>> raw;  // per episode, NaN marks missing
  double last_time = 0.0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw LoadError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()),
                      line_no);
    }
    const std::string& id = cells[col.at("episode_id")];
    if (id.empty()) throw LoadError("empty episode_id", line_no);
    const double time = parse_number(cells[col.at("time")], "time", line_no);
    if (out.episodes.empty() || out.episodes.back().id != id) {
      if (std::find(seen_ids.begin(), seen_ids.end(), id) != seen_ids.end()) {
        throw LoadError("rows are not sorted: episode '" + id + "' resumes after another episode", line_no);
      }
      seen_ids.push_back(id);
      Episode ep;
      ep.id = id;
      ep.channels = S;
      out.episodes.push_back(std::move(ep));
      raw.emplace_back();
    } else if (!(time > last_time)) {
      throw LoadError("rows are not sorted by time within episode '" + id + "'", line_no);
    }
    last_time = time;
    Episode& ep = out.episodes.back();
    for (std::int64_t s = 0; s < S; ++s) {
      const std::string& cell = cells[channel_col[s]];
      raw.back().push_back(is_missing(cell) ? std::numeric_limits<double>::quiet_NaN()
                                            : parse_number(cell, out.channels[s], line_no));
    }
    const double ev = parse_number(cells[col.at("event")], "event", line_no);
    if (ev != 0.0 && ev != 1.0) throw LoadError("event must be 0 or 1", line_no);
    if (ev == 1.0) ep.event_times.push_back(ep.steps);
    ++ep.steps;
  }
  if (out.episodes.empty()) throw LoadError("no data rows in '" + path + "'", line_no);
  for (std::size_t e = 0; e < out.episodes.size(); ++e) {
    Episode& ep = out.episodes[e];
    ep.values.resize(raw[e].size());
    for (std::int64_t s = 0; s < S; ++s) {
      double last = std::numeric_limits<double>::quiet_NaN();
      for (std::int64_t t = 0; t < ep.steps; ++t) {
        double v = raw[e][t * S + s];
        if (std::isnan(v)) {
          v = std::isnan(last) ? 0.0 : last;
        } else {
          last = v;
        }
        ep.values[t * S + s] = static_cast<float>(v);
      }
    }
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& channels, const std::vector<Episode>& episodes) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out << "episode_id,time";
  for (const auto& c : channels) out << ',' << c;
  out << ",event\n";
  out << std::setprecision(9);
  for (const auto& ep : episodes) {
    std::size_t next_event = 0;
    for (std::int64_t t = 0; t < ep.steps; ++t) {
      out << ep.id << ',' << t;
      for (std::int64_t s = 0; s < ep.channels; ++s) out << ',' << ep.at(t, s);
      const bool event = next_event < ep.event_times.size() && ep.event_times[next_event] == t;
      if (event) ++next_event;
      out << ',' << (event ? 1 : 0) << '\n';
    }
  }
}

void drop_constant_channels(Dataset& ds) {
  const auto S = ds.channels.size();
  std::vector<std::size_t> keep;
  for (std::size_t s = 0; s < S; ++s) {
    double n = 0, mean = 0, m2 = 0;
    for_each_train_value(ds, s, [&](double v) {
      n += 1;
      const double delta = v - mean;
      mean += delta / n;
      m2 += delta * (v - mean);
    });
    if (n > 0 && m2 / n >= kConstantVariance) keep.push_back(s);
  }
  if (keep.size() == S) return;
  if (keep.empty()) throw ConfigError("every channel is constant on the train split");
  auto project = [&](Episode& ep) {
    std::vector<float> v(static_cast<std::size_t>(ep.steps) * keep.size());
    for (std::int64_t t = 0; t < ep.steps; ++t)
      for (std::size_t k = 0; k < keep.size(); ++k) v[t * keep.size() + k] = ep.at(t, static_cast<std::int64_t>(keep[k]));
    ep.values = std::move(v);
    ep.channels = static_cast<std::int64_t>(keep.size());
  };
  for (auto& ep : ds.train) project(ep);
  for (auto& ep : ds.test) project(ep);
  std::vector<std::string> names;
  for (auto k : keep) names.push_back(ds.channels[k]);
  ds.channels = std::move(names);
}

void normalize_splits(Dataset& ds, Normalization mode) {
  const auto S = ds.channels.size();
  ds.norm_offset.assign(S, 0.0);
  ds.norm_scale.assign(S, 1.0);
  if (mode == Normalization::None) return;
  for (std::size_t s = 0; s < S; ++s) {
    if (mode == Normalization::ZScoreTrain) {
      double n = 0, mean = 0, m2 = 0;
      for_each_train_value(ds, s, [&](double v) {
        n += 1;
        const double delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
      });
      const double sd = n > 0 ? std::sqrt(m2 / n) : 0.0;
      ds.norm_offset[s] = mean;
      ds.norm_scale[s] = sd > 1e-8 ? sd : 1.0;
    } else {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for_each_train_value(ds, s, [&](double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      });
      if (!std::isfinite(lo)) lo = hi = 0.0;
      ds.norm_offset[s] = lo;
      ds.norm_scale[s] = hi - lo > 1e-8 ? hi - lo : 1.0;
    }
  }
  auto apply = [&](Episode& ep) {
    for (std::int64_t t = 0; t < ep.steps; ++t)
      for (std::size_t s = 0; s < S; ++s) {
        float& v = ep.values[t * S + s];
        v = static_cast<float>((v - ds.norm_offset[s]) / ds.norm_scale[s]);
      }
  };
  for (auto& ep : ds.train) apply(ep);
  for (auto& ep : ds.test) apply(ep);
}

Dataset prepare_dataset(const DatasetSpec& spec) {
  Dataset ds;
  ds.name = spec.name;
  if (spec.synthetic) {
    auto all = generate_synthetic(*spec.synthetic);
    for (int s = 0; s < spec.synthetic->channels; ++s) ds.channels.push_back("x" + std::to_string(s));
    split_off_test(all, spec.test_fraction, ds);
  } else {
    if (spec.train_csv.empty()) throw ConfigError("dataset '" + spec.name + "' names no train_csv");
    LoadedCsv train = load_csv(spec.train_csv, spec.channels);
    ds.channels = train.channels;
    if (spec.test_csv.empty()) {
      split_off_test(train.episodes, spec.test_fraction, ds);
    } else {
      ds.train = std::move(train.episodes);
      LoadedCsv test = load_csv(spec.test_csv, ds.channels);
      ds.test = std::move(test.episodes);
      for (auto& ep : ds.test) ep.split = "test";
    }
  }
  if (ds.train.empty()) throw ConfigError("dataset '" + spec.name + "' has no train episodes");
  if (spec.drop_constant) drop_constant_channels(ds);
  normalize_splits(ds, spec.normalization);
  return ds;
}

LabelRow build_labels(const Episode& ep, std::int64_t t, int K) {
  if (K < 1) throw ContractError("build_labels: K must be >= 1");
  LabelRow row;
  row.y.assign(K, 0);
  row.mask.assign(K, 1);
  const auto it = std::upper_bound(ep.event_times.begin(), ep.event_times.end(), t);
  const std::int64_t next = it == ep.event_times.end() ? -1 : *it;
  for (int dt = 1; dt <= K; ++dt) {
    const bool hit = next >= 0 && next <= t + dt;
    row.y[dt - 1] = hit ? 1 : 0;
    if (!hit && t + dt > ep.steps - 1) row.mask[dt - 1] = 0;
  }
  return row;
}

double time_to_event(const Episode& ep, std::int64_t t, bool lifecycle, std::optional<double> cap) {
  const auto it = std::upper_bound(ep.event_times.begin(), ep.event_times.end(), t);
  double tte = std::numeric_limits<double>::quiet_NaN();
  if (it != ep.event_times.end()) {
    tte = static_cast<double>(*it - t);
  } else if (lifecycle && t < ep.steps - 1) {
    tte = static_cast<double>(ep.steps - 1 - t);
  }
  if (cap && std::isfinite(tte)) tte = std::min(tte, *cap);
  return tte;
}

std::vector<std::int64_t> anchor_times(const Episode& ep, const DatasetSpec& spec) {
  if (spec.stride < 1) throw ConfigError("stride must be >= 1");
  const std::int64_t first = spec.cycle_as_patch ? 0 : spec.context_len - 1;
  std::vector<std::int64_t> out;
  for (std::int64_t t = first; t <= ep.steps - 2; t += spec.stride) out.push_back(t);
  return out;
}

std::vector<Episode> read_cmapss(const std::string& path, const std::vector<int>& sensors, bool run_to_failure) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  for (int s : sensors) {
    if (s < 1 || s > 21) throw ConfigError("sensor index " + std::to_string(s) + " outside 1..21");
  }
  std::vector<Episode> eps;
  std::string line;
  std::size_t line_no = 0;
  long prev_unit = -1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    std::vector<double> f;
    for (double v; is >> v;) f.push_back(v);
    if (f.empty() && is.eof()) continue;
    if (f.size() != 26 || !is.eof()) throw LoadError("expected 26 numeric columns", line_no);
    const long unit = std::lround(f[0]);
    if (unit != prev_unit) {
      Episode e;
      e.id = "unit" + std::to_string(unit);
      e.channels = static_cast<std::int64_t>(sensors.size());
      eps.push_back(std::move(e));
      prev_unit = unit;
    }
    Episode& e = eps.back();
    if (std::lround(f[1]) != e.steps + 1) throw LoadError("cycles of a unit must run 1, 2, ...", line_no);
    for (int s : sensors) e.values.push_back(static_cast<float>(f[4 + s]));
    ++e.steps;
  }
  if (eps.empty()) throw LoadError("no rows in '" + path + "'");
  if (run_to_failure) {
    for (auto& e : eps) e.event_times = {e.steps - 1};
  }
  return eps;
}

std::vector<Episode> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_episodes < 1 || spec.channels < 1 || spec.steps < 2) throw ConfigError("synthetic: empty specification");
  if (!(spec.base_rate > 0.0 && spec.base_rate < 1.0)) throw ConfigError("synthetic: base_rate must be in (0, 1)");
  if (spec.beta < 0.0) throw ConfigError("synthetic: beta must be >= 0");
  // Latent paths and observation noise use separate streams so that, for a
  // fixed seed, changing beta or sigma leaves the event process untouched.
  std::mt19937_64 latent_rng(spec.seed);
  std::mt19937_64 obs_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::gamma_distribution<double> shock(spec.gamma_shape, 1.0 / spec.gamma_shape);
  const double theta = -std::log(spec.base_rate / (1.0 - spec.base_rate));

  std::vector<double> loading(spec.channels), period(spec.channels), phase(spec.channels);
  for (int s = 0; s < spec.channels; ++s) {
    loading[s] = 0.5 + unif(obs_rng);
    period[s] = 20.0 + 80.0 * unif(obs_rng);
    phase[s] = 2.0 * std::numbers::pi * unif(obs_rng);
  }

  std::vector<Episode> out;
  out.reserve(spec.n_episodes);
  for (int e = 0; e < spec.n_episodes; ++e) {
    Episode ep;
    ep.id = "syn" + std::to_string(e);
    ep.channels = spec.channels;
    const double drift = spec.drift_lo + (spec.drift_hi - spec.drift_lo) * unif(latent_rng);
    double z = 0.2 * unif(latent_rng);
    for (int t = 0; t < spec.steps; ++t) {
      ep.latent.push_back(z);
      const double hazard = sigmoid(spec.kappa * z - theta);
      const bool fires = unif(latent_rng) < hazard;
      if (spec.lifecycle) {
        if (fires || t == spec.steps - 1) {
          ep.event_times.push_back(t);
          break;
        }
        z += drift * (0.2 + z) * shock(latent_rng);
      } else if (fires) {
        ep.event_times.push_back(t);
        z = 0.2 * unif(latent_rng);
      } else {
        z += drift * (0.2 + z) * shock(latent_rng);
      }
    }
    ep.steps = static_cast<std::int64_t>(ep.latent.size());
    ep.values.resize(static_cast<std::size_t>(ep.steps * spec.channels));
    std::vector<double> ar(spec.channels, 0.0);
    for (std::int64_t t = 0; t < ep.steps; ++t) {
      for (int s = 0; s < spec.channels; ++s) {
        ar[s] = spec.ar_phi * ar[s] + spec.ar_sigma * normal(obs_rng);
        const double seasonal = spec.seasonal_amp * std::sin(2.0 * std::numbers::pi * t / period[s] + phase[s]);
        const double x = spec.beta * loading[s] * ep.latent[t] + seasonal + ar[s] + spec.sigma * normal(obs_rng);
        ep.values[t * spec.channels + s] = static_cast<float>(x);
      }
    }
    out.push_back(std::move(ep));
  }
  return out;
}

Normalization parse_normalization(const std::string& name) {
  if (name == "zscore_train") return Normalization::ZScoreTrain;
  if (name == "minmax_subset") return Normalization::MinMaxSubset;
  if (name == "none") return Normalization::None;
  throw ConfigError("unknown normalization '" + name + "' (expected zscore_train, minmax_subset or none)");
}

std::string to_string(Normalization mode) {
  switch (mode) {
    case Normalization::ZScoreTrain:
      return "zscore_train";
    case Normalization::MinMaxSubset:
      return "minmax_subset";
    case Normalization::None:
      return "none";
  }
  return "none";
}

}  // namespace hepa
