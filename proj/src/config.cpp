#include "hepa/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "hepa/errors.hpp"
#include "hepa/windows.hpp"

namespace hepa {

using nlohmann::json;

namespace {

// Reads known keys from one object and reports any it did not consume.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }
  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& p, const std::string& base_dir, const std::string& data_root) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  const std::string& root = data_root.empty() ? base_dir : data_root;
  return root.empty() ? p : (std::filesystem::path(root) / p).string();
}

SyntheticSpec parse_synthetic(const json& j) {
  SyntheticSpec s;
  Section sec(j, "dataset.synthetic");
  sec.get("n_episodes", s.n_episodes);
  sec.get("channels", s.channels);
  sec.get("steps", s.steps);
  sec.get("beta", s.beta);
  sec.get("sigma", s.sigma);
  sec.get("base_rate", s.base_rate);
  sec.get("seed", s.seed);
  sec.get("lifecycle", s.lifecycle);
  sec.get("drift_lo", s.drift_lo);
  sec.get("drift_hi", s.drift_hi);
  sec.get("kappa", s.kappa);
  sec.get("gamma_shape", s.gamma_shape);
  sec.get("ar_phi", s.ar_phi);
  sec.get("ar_sigma", s.ar_sigma);
  sec.get("seasonal_amp", s.seasonal_amp);
  return s;
}

}  // namespace

RunConfig parse_run_config(const json& j, const std::string& base_dir, const std::string& data_root) {
  RunConfig rc;
  rc.source = j;
  Section top(j, "config");
  if (const json* d = top.child("dataset")) {
    DatasetSpec& s = rc.dataset;
    Section sec(*d, "dataset");
    std::string norm = to_string(s.normalization);
    sec.get("name", s.name);
    sec.get("train_csv", s.train_csv);
    sec.get("test_csv", s.test_csv);
    sec.get("test_fraction", s.test_fraction);
    sec.get("channels", s.channels);
    sec.get("drop_constant", s.drop_constant);
    sec.get("normalization", norm);
    sec.get("context_len", s.context_len);
    sec.get("patch", s.patch);
    sec.get("cycle_as_patch", s.cycle_as_patch);
    sec.get("max_tokens", s.max_tokens);
    sec.get("K", s.K);
    sec.get("rul_cap", s.rul_cap);
    sec.get("lifecycle", s.lifecycle);
    sec.get("stride", s.stride);
    if (const json* syn = sec.child("synthetic")) s.synthetic = parse_synthetic(*syn);
    s.normalization = parse_normalization(norm);
    s.train_csv = resolve(s.train_csv, base_dir, data_root);
    s.test_csv = resolve(s.test_csv, base_dir, data_root);
  }
  if (const json* n = top.child("network")) {
    Section sec(*n, "network");
    sec.get("d_model", rc.network.d_model);
    sec.get("heads", rc.network.heads);
    sec.get("layers", rc.network.layers);
    sec.get("ffn", rc.network.ffn);
    sec.get("dropout", rc.network.dropout);
  }
  rc.network.K = rc.dataset.K;
  if (const json* p = top.child("pretrain")) {
    PretrainConfig& c = rc.pretrain;
    Section sec(*p, "pretrain");
    sec.get("alpha", c.alpha);
    sec.get("lr", c.lr);
    sec.get("weight_decay", c.weight_decay);
    sec.get("batch", c.batch);
    sec.get("max_epochs", c.max_epochs);
    sec.get("patience", c.patience);
    sec.get("seed", c.seed);
    sec.get("snapshot_epochs", c.snapshot_epochs);
    sec.get("max_steps_per_epoch", c.max_steps_per_epoch);
    sec.get("sigreg_directions", c.sigreg_directions);
    sec.get("val_samples", c.val_samples);
    sec.get("target_chunk", c.target_chunk);
  }
  if (const json* f = top.child("finetune")) {
    FinetuneConfig& c = rc.finetune;
    Section sec(*f, "finetune");
    std::string mode = to_string(c.mode), init = to_string(c.predictor_init);
    sec.get("lr", c.lr);
    sec.get("weight_decay", c.weight_decay);
    sec.get("batch", c.batch);
    sec.get("max_epochs", c.max_epochs);
    sec.get("patience", c.patience);
    sec.get("label_fraction", c.label_fraction);
    sec.get("predictor_init", init);
    sec.get("mode", mode);
    sec.get("seed", c.seed);
    sec.get("shuffle_labels", c.shuffle_labels);
    sec.get("max_steps_per_epoch", c.max_steps_per_epoch);
    sec.get("f1_horizon", c.f1_horizon);
    c.mode = parse_finetune_mode(mode);
    c.predictor_init = parse_predictor_init(init);
  }
  top.get("seeds", rc.seeds);
  top.get("fractions", rc.fractions);
  if (rc.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  for (double f : rc.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: label fractions must lie in (0, 1]");
  }
  return rc;
}

RunConfig load_run_config(const std::string& path, const std::string& data_root) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_run_config(j, std::filesystem::path(path).parent_path().string(), data_root);
}

std::string data_root_from_env() {
  const char* v = std::getenv("HEPA_DATA_DIR");
  return v ? v : "";
}

std::int64_t token_width(const DatasetSpec& spec, std::size_t channels) {
  return WindowPolicy::from_spec(spec, static_cast<std::int64_t>(channels)).token_dim();
}

}  // namespace hepa
