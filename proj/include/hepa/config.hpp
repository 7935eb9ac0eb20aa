#pragma once

// JSON run configuration shared by the command-line tools. Every section is
// optional; absent keys keep the library defaults and unknown keys are
// rejected so typos surface as ConfigError.
//
// {
//   "dataset":  {"name", "train_csv", "test_csv", "test_fraction", "channels",
//                "drop_constant", "normalization", "context_len", "patch",
//                "cycle_as_patch", "max_tokens", "K", "rul_cap", "lifecycle",
//                "stride", "synthetic": {...}},
//   "network":  {"d_model", "heads", "layers", "ffn", "dropout"},
//   "pretrain": {...PretrainConfig fields...},
//   "finetune": {...FinetuneConfig fields...},
//   "seeds": [0, 1, 2],
//   "fractions": [1.0, 0.1, 0.05, 0.02, 0.01]
// }

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hepa/data.hpp"
#include "hepa/network.hpp"
#include "hepa/pretrain.hpp"
#include "hepa/survival.hpp"

namespace hepa {

struct RunConfig {
  DatasetSpec dataset;
  NetworkConfig network;  // d_in and K are filled from the prepared dataset
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> fractions{1.0, 0.10, 0.05, 0.02, 0.01};
  nlohmann::json source;  // the parsed document, for hashing and provenance
};

// Relative CSV paths resolve against `data_root` when it is non-empty,
// otherwise against the config file's directory.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir, const std::string& data_root);
RunConfig load_run_config(const std::string& path, const std::string& data_root);

// $HEPA_DATA_DIR or empty.
std::string data_root_from_env();

// Token width for the prepared dataset: channels * patch, or channels in
// cycle-as-patch mode.
std::int64_t token_width(const DatasetSpec& spec, std::size_t channels);

}  // namespace hepa
