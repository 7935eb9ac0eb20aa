#include "hepa/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hepa/errors.hpp"

namespace hepa {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'E', 'P', 'A'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void bytes(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) throw LoadError("truncated checkpoint '" + path_ + "'");
  }
  std::uint64_t uint(int width) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::string string(std::size_t n) {
    if (n > (1u << 28)) throw LoadError("implausible length in checkpoint '" + path_ + "'");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& in_;
  std::string path_;
};

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const NetworkConfig& c) {
  return {{"d_in", c.d_in},   {"d_model", c.d_model}, {"heads", c.heads}, {"layers", c.layers},
          {"ffn", c.ffn},     {"dropout", c.dropout}, {"K", c.K}};
}

NetworkConfig network_from_json(const json& j) {
  NetworkConfig c;
  try {
    c.d_in = j.at("d_in").get<std::int64_t>();
    c.d_model = j.at("d_model").get<std::int64_t>();
    c.heads = j.at("heads").get<int>();
    c.layers = j.at("layers").get<int>();
    c.ffn = j.at("ffn").get<std::int64_t>();
    c.dropout = j.at("dropout").get<float>();
    c.K = j.at("K").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  return c;
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::string& path, const HepaModel& model, json meta) {
  meta["network"] = to_json(model.config);
  const std::string meta_text = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  const NamedTensors params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw LoadError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw LoadError("'" + path + "' is not a checkpoint");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in '" + path + "'");
  }
  Checkpoint ck;
  try {
    ck.meta = json::parse(r.string(r.uint(4)));
  } catch (const json::parse_error& e) {
    throw LoadError("checkpoint metadata: " + std::string(e.what()));
  }
  if (!ck.meta.contains("network")) throw LoadError("checkpoint '" + path + "' lacks a network config");
  const NetworkConfig cfg = network_from_json(ck.meta["network"]);
  const auto count = r.uint(4);
  NamedTensors stored;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string(r.uint(4));
    const auto rank = r.uint(4);
    if (rank > 8) throw LoadError("implausible tensor rank in '" + path + "'");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::int64_t>(r.uint(8)));
      n *= static_cast<std::uint64_t>(shape.back());
    }
    if (n > (1ull << 32)) throw LoadError("implausible tensor size in '" + path + "'");
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    stored.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  ck.model = HepaModel(cfg, 0);
  try {
    ck.model.load_values(stored);
  } catch (const std::exception& e) {
    throw LoadError("checkpoint '" + path + "': " + e.what());
  }
  return ck;
}

void write_surface(const std::string& path, const ProbabilitySurface& s) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write surface '" + path + "'");
  out << "HEPA-SURFACE v1, K=" << s.K << ", dataset=" << s.dataset << ", seed=" << s.seed << '\n';
  out << "episode,t,dt,p,y,mask\n";
  for (const auto& row : s.rows) {
    if (row.episode.find_first_of(",\n") != std::string::npos) {
      throw ContractError("episode id '" + row.episode + "' cannot be written to a surface file");
    }
    for (int dt = 1; dt <= s.K; ++dt) {
      out << row.episode << ',' << row.t << ',' << dt << ',' << format_double(row.p[dt - 1]) << ','
          << int(row.y[dt - 1]) << ',' << int(row.mask[dt - 1]) << '\n';
    }
  }
}

ProbabilitySurface read_surface(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open surface '" + path + "'");
  ProbabilitySurface s;
  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty surface file", 1);
  {
    int K = 0;
    unsigned long long seed = 0;
    // dataset ids end at the comma before "seed="
    const auto seed_at = line.rfind(", seed=");
    const auto ds_at = line.find(", dataset=");
    if (line.rfind("HEPA-SURFACE v1, K=", 0) != 0 || seed_at == std::string::npos || ds_at == std::string::npos ||
        std::sscanf(line.c_str(), "HEPA-SURFACE v1, K=%d", &K) != 1 ||
        std::sscanf(line.c_str() + seed_at, ", seed=%llu", &seed) != 1 || K < 1) {
      throw LoadError("bad surface header", 1);
    }
    s.K = K;
    s.seed = seed;
    s.dataset = line.substr(ds_at + 10, seed_at - ds_at - 10);
  }
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "episode,t,dt,p,y,mask") throw LoadError("missing column header", 2);
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw LoadError("expected 6 fields, got " + std::to_string(f.size()), line_no);
    std::int64_t t = 0;
    int dt = 0, y = 0, m = 0;
    double p = 0;
    try {
      std::size_t used = 0;
      t = std::stoll(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("t");
      dt = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("dt");
      p = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("p");
      y = std::stoi(f[4]);
      m = std::stoi(f[5]);
    } catch (const std::exception&) {
      throw LoadError("unparsable field", line_no);
    }
    if ((y != 0 && y != 1) || (m != 0 && m != 1)) throw LoadError("y and mask must be 0 or 1", line_no);
    if (!std::isfinite(p) || p < 0 || p > 1) throw LoadError("p outside [0, 1]", line_no);
    if (dt == 1) {
      SurfaceRow row;
      row.episode = f[0];
      row.t = t;
      s.rows.push_back(std::move(row));
    } else if (s.rows.empty() || s.rows.back().episode != f[0] || s.rows.back().t != t ||
               static_cast<int>(s.rows.back().p.size()) != dt - 1) {
      throw LoadError("horizons of an anchor must run 1..K in order", line_no);
    }
    if (dt > s.K) throw LoadError("dt exceeds K", line_no);
    auto& row = s.rows.back();
    row.p.push_back(p);
    row.y.push_back(static_cast<std::uint8_t>(y));
    row.mask.push_back(static_cast<std::uint8_t>(m));
  }
  if (!s.rows.empty() && static_cast<int>(s.rows.back().p.size()) != s.K) {
    throw LoadError("last anchor is missing horizons", line_no);
  }
  try {
    validate_surface(s);
  } catch (const ContractError& e) {
    throw LoadError("surface '" + path + "': " + e.what());
  }
  return s;
}

json to_json(const MetricReport& r) {
  json per = json::array();
  for (const auto& h : r.per_horizon) per.push_back(optional_number(h.auroc));
  return {{"h_auroc", optional_number(r.h_auroc)},
          {"n_valid_horizons", r.n_valid_horizons},
          {"per_horizon_auroc", per},
          {"rmse", optional_number(r.rmse)},
          {"threshold", r.threshold},
          {"f1_horizon", r.f1_horizon},
          {"f1", r.f1},
          {"pa_f1", r.pa_f1},
          {"non_pa_f1", r.non_pa_f1},
          {"ece", r.calib.ece},
          {"brier", r.calib.brier},
          {"reliability", r.calib.reliability},
          {"resolution", r.calib.resolution},
          {"uncertainty", r.calib.uncertainty},
          {"n_cells", r.calib.n}};
}

json to_json(const SweepReport& r) {
  json pts = json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"epoch", p.epoch}, {"seed", p.seed}, {"epsilon", p.epsilon}, {"h_auroc", p.h_auroc}});
  }
  return {{"spearman_rho", r.spearman_rho}, {"p_value", r.p_value}, {"n", r.n}, {"points", pts}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

void write_horizon_csv(const std::string& path, const std::vector<HorizonStat>& per_horizon) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out << "dt,auroc,prevalence,n\n";
  for (const auto& h : per_horizon) {
    out << h.dt << ',' << (h.auroc ? format_double(*h.auroc) : "") << ',' << format_double(h.prevalence) << ','
        << h.n << '\n';
  }
}

std::string horizon_svg(const std::vector<HorizonStat>& per_horizon, const std::string& title) {
  constexpr double W = 640, H = 360, L = 50, R = 20, T = 30, B = 40;
  const int K = per_horizon.empty() ? 1 : per_horizon.back().dt;
  auto x = [&](int dt) { return L + (W - L - R) * (K > 1 ? (dt - 1.0) / (K - 1.0) : 0.5); };
  auto y = [&](double a) { return T + (H - T - B) * (1.0 - a); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << W - R << "\" y2=\"" << y(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << L << "\" y2=\"" << y(1) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << y(0.5) << "\" x2=\"" << W - R << "\" y2=\"" << y(0.5)
     << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (double a : {0.0, 0.5, 1.0}) {
    os << "<text x=\"" << L - 30 << "\" y=\"" << y(a) + 4 << "\" font-size=\"11\">" << a << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\">horizon (1.." << K << ")</text>\n";
  std::string points;
  auto flush = [&] {
    if (!points.empty()) os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"" << points
                            << "\"/>\n";
    points.clear();
  };
  for (const auto& h : per_horizon) {
    if (!h.auroc) {
      flush();
      continue;
    }
    std::ostringstream p;
    p << std::fixed << std::setprecision(2) << x(h.dt) << ',' << y(*h.auroc) << ' ';
    points += p.str();
  }
  flush();
  os << "</svg>\n";
  return os.str();
}

}  // namespace hepa
