#include "atlascrf/toy.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "atlascrf/error.hpp"
#include "atlascrf/vol1.hpp"

namespace atlascrf {

Sample toy_subject(const ToyConfig& c, std::uint64_t subject_seed) {
  if (c.edge < 8) fail(ErrorCode::InvalidArgument, "toy volumes need edge >= 8");
  std::mt19937_64 rng(subject_seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double e = static_cast<double>(c.edge);
  const double mid = (e - 1.0) / 2.0;
  double center[3], outer[3], inner[3];
  const double outer_base[3] = {0.34, 0.30, 0.27};
  for (int a = 0; a < 3; ++a) center[a] = mid + c.max_shift * unit(rng);
  for (int a = 0; a < 3; ++a) outer[a] = e * outer_base[a] * (1.0 + c.radius_jitter * unit(rng));
  for (int a = 0; a < 3; ++a) inner[a] = outer[a] * 0.5 * (1.0 + c.radius_jitter * unit(rng));

  const Dims dims{c.edge, c.edge, c.edge};
  Sample s{ScalarVolume(dims), LabelMap(dims)};
  std::normal_distribution<double> noise(0.0, c.noise_sigma);
  for (std::size_t z = 0; z < c.edge; ++z)
    for (std::size_t y = 0; y < c.edge; ++y)
      for (std::size_t x = 0; x < c.edge; ++x) {
        const double p[3] = {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        double ro = 0.0, ri = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = p[a] - center[a];
          ro += d * d / (outer[a] * outer[a]);
          ri += d * d / (inner[a] * inner[a]);
        }
        Label l = 0;
        double v = c.background;
        if (ri <= 1.0) {
          l = 2;
          v = c.inner;
        } else if (ro <= 1.0) {
          l = 1;
          v = c.outer;
        }
        s.labels.at(z, y, x) = l;
        // f32 storage keeps toy files and in-memory subjects identical.
        s.scan.at(z, y, x) = static_cast<double>(static_cast<float>(v + noise(rng)));
      }
  return s;
}

ToyDataset make_toy_dataset(const ToyConfig& c) {
  ToyDataset d;
  std::mt19937_64 seeds(c.seed);
  for (std::size_t i = 0; i < c.train; ++i) d.train.push_back(toy_subject(c, seeds()));
  for (std::size_t i = 0; i < c.val; ++i) d.val.push_back(toy_subject(c, seeds()));
  for (std::size_t i = 0; i < c.test; ++i) d.test.push_back(toy_subject(c, seeds()));
  return d;
}

void write_toy_dataset(const std::filesystem::path& dir, const ToyDataset& data, const ToyConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j{{"classes", kToyClasses},
                   {"generator",
                    {{"edge", c.edge},
                     {"seed", c.seed},
                     {"background", c.background},
                     {"outer", c.outer},
                     {"inner", c.inner},
                     {"noise_sigma", c.noise_sigma}}}};
  auto emit = [&](const char* split, const std::vector<Sample>& set) {
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%03zu", split, i);
      const std::string scan = std::string(stem) + "_scan.vol1";
      const std::string labels = std::string(stem) + "_labels.vol1";
      write_vol1(dir / scan, set[i].scan);
      write_vol1(dir / labels, set[i].labels, kToyClasses);
      list.push_back({{"scan", scan}, {"labels", labels}});
    }
    j[split] = list;
  };
  emit("train", data.train);
  emit("val", data.val);
  emit("test", data.test);
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(dir / "dataset.json",
                   std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

SplitManifest read_split_manifest(const std::filesystem::path& path) {
  const auto raw = read_file_bytes(path);
  SplitManifest m;
  try {
    const auto j = nlohmann::json::parse(reinterpret_cast<const char*>(raw.data()),
                                         reinterpret_cast<const char*>(raw.data()) + raw.size());
    m.classes = j.at("classes").get<std::size_t>();
    const auto dir = path.parent_path();
    auto read = [&](const char* split, auto& out) {
      if (!j.contains(split)) return;
      for (const auto& e : j.at(split)) {
        out.emplace_back(dir / e.at("scan").get<std::string>(), dir / e.at("labels").get<std::string>());
      }
    };
    read("train", m.train);
    read("val", m.val);
    read("test", m.test);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadHeader, "dataset manifest " + path.string() + " is malformed: " + e.what());
  }
  return m;
}

std::vector<Sample> load_samples(const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& files) {
  std::vector<Sample> out;
  for (const auto& [scan, labels] : files) out.push_back(Sample{read_scalar_vol1(scan), read_label_vol1(labels)});
  return out;
}

}  // namespace atlascrf
