#pragma once

// On-disk artifacts: model checkpoints, probability-surface files, metric
// reports (JSON), per-horizon curves (CSV and SVG).

#include <string>

#include "json.hpp"

#include "hepa/metrics.hpp"
#include "hepa/network.hpp"
#include "hepa/theory.hpp"

namespace hepa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "HEPA", u32 version, u32 metadata length, metadata JSON, u32 tensor
// count, then per tensor: u32 name length, name, u32 rank, u64 dims[rank],
// float32 values. All integers and floats little-endian. The metadata always
// carries the network configuration under "network".
void save_checkpoint(const std::string& path, const HepaModel& model, nlohmann::json meta = nlohmann::json::object());

struct Checkpoint {
  HepaModel model;
  nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_from_json(const nlohmann::json& j);

// FNV-1a over the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

void write_surface(const std::string& path, const ProbabilitySurface& s);
// LoadError with the offending line for malformed files.
ProbabilitySurface read_surface(const std::string& path);

nlohmann::json to_json(const MetricReport& r);
void write_json(const std::string& path, const nlohmann::json& j);
void write_horizon_csv(const std::string& path, const std::vector<HorizonStat>& per_horizon);
// Per-horizon AUROC polyline, broken at skipped horizons.
std::string horizon_svg(const std::vector<HorizonStat>& per_horizon, const std::string& title);

nlohmann::json to_json(const SweepReport& r);

}  // namespace hepa
