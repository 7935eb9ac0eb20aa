#pragma once

// Episode storage, CSV ingestion, train-only normalization, cumulative event
// labels, anchor enumeration and the synthetic precursor generator.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hepa {

struct Episode {
  std::string id;
  std::int64_t steps = 0;
  std::int64_t channels = 0;
  std::vector<float> values;  // [steps x channels], time-major
  std::vector<std::int64_t> event_times;  // sorted, within [0, steps)
  std::string split = "train";
  std::vector<double> latent;  // generator state per step; empty for loaded data

  float at(std::int64_t t, std::int64_t s) const { return values[t * channels + s]; }
};

struct SyntheticSpec {
  int n_episodes = 200;
  int channels = 5;
  int steps = 600;  // fixed length (stream) or maximum length (lifecycle)
  double beta = 2.0;  // precursor strength; 0 makes channels independent of the latent state
  double sigma = 0.1;  // white observation noise
  double base_rate = 1e-5;  // hazard at zero degradation
  std::uint64_t seed = 0;
  bool lifecycle = false;  // run to failure instead of resetting after each event
  double drift_lo = 0.012;
  double drift_hi = 0.02;
  double kappa = 16.0;  // hazard logit slope in the latent state
  double gamma_shape = 8.0;  // multiplicative drift shock ~ Gamma(shape, 1/shape)
  double ar_phi = 0.9;
  double ar_sigma = 0.15;
  double seasonal_amp = 0.5;
};

enum class Normalization { ZScoreTrain, MinMaxSubset, None };

struct DatasetSpec {
  std::string name = "dataset";
  std::string train_csv;
  std::string test_csv;  // empty: split the last test_fraction of train episodes off
  double test_fraction = 0.2;
  std::vector<std::string> channels;  // empty: every column except the key/event columns
  bool drop_constant = true;
  Normalization normalization = Normalization::ZScoreTrain;
  std::int64_t context_len = 512;
  int patch = 16;
  bool cycle_as_patch = false;
  std::int64_t max_tokens = 512;  // cycle-as-patch history cap
  int K = 200;
  std::optional<double> rul_cap;
  bool lifecycle = false;  // terminal failure at each episode's last step
  std::int64_t stride = 8;
  std::optional<SyntheticSpec> synthetic;  // generate instead of reading CSV
};

struct Dataset {
  std::string name;
  std::vector<std::string> channels;
  std::vector<Episode> train;
  std::vector<Episode> test;
  std::vector<double> norm_offset;  // x' = (x - offset) / scale, train-split statistics
  std::vector<double> norm_scale;
};

struct LoadedCsv {
  std::vector<std::string> channels;
  std::vector<Episode> episodes;
};

// Columns: episode_id, time, <channels...>, event. Empty or NaN cells are
// forward-filled within an episode, then zero-filled.
LoadedCsv load_csv(const std::string& path, const std::vector<std::string>& wanted_channels = {});
void write_csv(const std::string& path, const std::vector<std::string>& channels, const std::vector<Episode>& episodes);

// Loads or generates, splits, drops constant channels and normalizes with
// statistics of the train split only.
Dataset prepare_dataset(const DatasetSpec& spec);
// Fits normalization on `train` and applies it to both splits in place.
void normalize_splits(Dataset& ds, Normalization mode);
// Removes channels whose train-split variance is below 1e-8.
void drop_constant_channels(Dataset& ds);

struct LabelRow {
  std::vector<std::uint8_t> y;  // y[dt-1] = 1 iff an event e satisfies t < e <= t + dt
  std::vector<std::uint8_t> mask;  // 0 where t + dt runs past the last step with no event seen
};

LabelRow build_labels(const Episode& ep, std::int64_t t, int K);

// Steps to the next event after t (or to the terminal step for lifecycle
// data), optionally capped. Used as ground truth for the RMSE projection.
double time_to_event(const Episode& ep, std::int64_t t, bool lifecycle, std::optional<double> cap);

// Window mode: t = context_len-1, +stride, ... <= steps-2. Cycle-as-patch
// mode: t = 0, +stride, ... <= steps-2.
std::vector<std::int64_t> anchor_times(const Episode& ep, const DatasetSpec& spec);

std::vector<Episode> generate_synthetic(const SyntheticSpec& spec);

// Sensors kept from native C-MAPSS files (1-based indices into the 21
// sensor columns); the rest are near-constant on FD001.
inline const std::vector<int> kCmapssSensors{2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21};

// Native C-MAPSS rows: unit, cycle, 3 operating settings, 21 sensors,
// whitespace separated. Run-to-failure files get an event on each unit's
// last cycle; otherwise (test files) no events are recorded.
std::vector<Episode> read_cmapss(const std::string& path, const std::vector<int>& sensors = kCmapssSensors,
                                 bool run_to_failure = true);

Normalization parse_normalization(const std::string& name);
std::string to_string(Normalization mode);

}  // namespace hepa
