#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "atlascrf/train.hpp"

namespace atlascrf {

/// Noisy nested ellipsoids: class 0 background, 1 outer shell, 2 inner core.
/// The core's intensity sits close to the background's, so appearance alone
/// confuses them.
struct ToyConfig {
  std::size_t edge = 32;
  std::size_t train = 10;
  std::size_t val = 2;
  std::size_t test = 6;
  std::uint64_t seed = 7;
  double background = 20.0;
  double outer = 100.0;
  double inner = 40.0;
  double noise_sigma = 15.0;
  double max_shift = 2.0;       // voxels, per axis
  double radius_jitter = 0.08;  // relative
};

inline constexpr std::size_t kToyClasses = 3;

struct ToyDataset {
  std::vector<Sample> train, val, test;
};

Sample toy_subject(const ToyConfig& config, std::uint64_t subject_seed);
ToyDataset make_toy_dataset(const ToyConfig& config);

/// Split manifest naming the VOL1 files of every subject.
struct SplitManifest {
  std::size_t classes = 0;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> train, val, test;  // (scan, labels)
};

/// Writes <dir>/<split>_NNN_{scan,labels}.vol1 and <dir>/dataset.json.
void write_toy_dataset(const std::filesystem::path& dir, const ToyDataset& data, const ToyConfig& config);

SplitManifest read_split_manifest(const std::filesystem::path& path);
std::vector<Sample> load_samples(const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& files);

}  // namespace atlascrf
