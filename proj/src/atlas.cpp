#include "atlascrf/atlas.hpp"

#include <cmath>

#include <json.hpp>

#include "atlascrf/error.hpp"
#include "atlascrf/parallel.hpp"
#include "atlascrf/vol1.hpp"

namespace atlascrf {

void AtlasBuildInput::validate() const {
  if (scans.empty()) fail(ErrorCode::InvalidArgument, "atlas build needs at least one (scan, labels) pair");
  if (scans.size() != labels.size()) {
    fail(ErrorCode::ShapeMismatch, std::to_string(scans.size()) + " scans but " + std::to_string(labels.size()) +
                                       " label maps");
  }
  if (classes < 1) fail(ErrorCode::InvalidArgument, "atlas build needs K >= 1");
  const Dims dims = scans.front().dims();
  for (std::size_t i = 0; i < scans.size(); ++i) {
    require_same_dims(scans[i].dims(), dims, "atlas scan vs first scan");
    require_same_dims(labels[i].dims(), dims, "atlas labels vs first scan");
    labels[i].check_classes(classes);
  }
}

AtlasPair build_atlas(const AtlasBuildInput& input) {
  input.validate();
  const Dims dims = input.scans.front().dims();
  const std::size_t n = dims.voxels();
  const std::size_t count = input.scans.size();
  const double inv = 1.0 / static_cast<double>(count);

  ScalarVolume scan(dims, 0.0);
  std::vector<std::vector<std::uint32_t>> votes(input.classes, std::vector<std::uint32_t>(n, 0));
  parallel_for(n, [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t p = 0; p < count; ++p) s += input.scans[p][i];
    scan[i] = s * inv;
    for (std::size_t p = 0; p < count; ++p) ++votes[input.labels[p][i]][i];
  });
  ProbVolume labels(input.classes, dims, 0.0, true);
  for (std::size_t l = 0; l < input.classes; ++l) {
    for (std::size_t i = 0; i < n; ++i) labels.at(l, i) = static_cast<double>(votes[l][i]) * inv;
  }
  return AtlasPair{std::move(scan), std::move(labels)};
}

double shifted_ncc(const ScalarVolume& a, const ScalarVolume& b, const Shift& s) {
  require_same_dims(a.dims(), b.dims(), "ncc");
  const Dims d = b.dims();
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  std::size_t count = 0;
  for (std::size_t z = 0; z < d.d; ++z) {
    const long az = static_cast<long>(z) - s[0];
    if (az < 0 || az >= static_cast<long>(d.d)) continue;
    for (std::size_t y = 0; y < d.h; ++y) {
      const long ay = static_cast<long>(y) - s[1];
      if (ay < 0 || ay >= static_cast<long>(d.h)) continue;
      for (std::size_t x = 0; x < d.w; ++x) {
        const long ax = static_cast<long>(x) - s[2];
        if (ax < 0 || ax >= static_cast<long>(d.w)) continue;
        const double va = a.at(static_cast<std::size_t>(az), static_cast<std::size_t>(ay), static_cast<std::size_t>(ax));
        const double vb = b.at(z, y, x);
        sa += va;
        sb += vb;
        saa += va * va;
        sbb += vb * vb;
        sab += va * vb;
        ++count;
      }
    }
  }
  if (count == 0) return 0.0;
  const double c = static_cast<double>(count);
  const double cov = sab - sa * sb / c;
  const double va = saa - sa * sa / c;
  const double vb = sbb - sb * sb / c;
  if (va <= 1e-12 * c || vb <= 1e-12 * c) return 0.0;
  return cov / std::sqrt(va * vb);
}

Shift best_translation(const ScalarVolume& atlas_scan, const ScalarVolume& target, int max_shift) {
  if (max_shift < 0) fail(ErrorCode::InvalidArgument, "max_shift must be >= 0");
  require_same_dims(atlas_scan.dims(), target.dims(), "atlas scan vs target");
  if (max_shift == 0) return {0, 0, 0};
  const int side = 2 * max_shift + 1;
  const std::size_t total = static_cast<std::size_t>(side) * side * side;
  auto decode = [&](std::size_t c) {
    const int i = static_cast<int>(c);
    return Shift{i / (side * side) - max_shift, (i / side) % side - max_shift, i % side - max_shift};
  };
  std::vector<double> score(total);
  parallel_for(total, [&](std::size_t c) { score[c] = shifted_ncc(atlas_scan, target, decode(c)); });
  // Candidates are enumerated in lexicographic order, so a strict > keeps
  // the smallest shift among equal scores.
  std::size_t best = 0;
  for (std::size_t c = 1; c < total; ++c) {
    if (score[c] > score[best]) best = c;
  }
  return decode(best);
}

AtlasPair shift_atlas(const AtlasPair& atlas, const Shift& s) {
  atlas.validate();
  const Dims d = atlas.scan.dims();
  const std::size_t k = atlas.labels.classes();
  AtlasPair out{ScalarVolume(d, 0.0), ProbVolume(k, d, 1.0 / static_cast<double>(k), true)};
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const long sz = static_cast<long>(z) - s[0];
        const long sy = static_cast<long>(y) - s[1];
        const long sx = static_cast<long>(x) - s[2];
        if (!d.contains(sz, sy, sx)) continue;
        const std::size_t dst = d.index(z, y, x);
        const std::size_t src =
            d.index(static_cast<std::size_t>(sz), static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        out.scan[dst] = atlas.scan[src];
        for (std::size_t l = 0; l < k; ++l) out.labels.at(l, dst) = atlas.labels.at(l, src);
      }
  return out;
}

AlignResult align_translation(const AtlasPair& atlas, const ScalarVolume& target, int max_shift) {
  AlignResult r;
  r.shift = best_translation(atlas.scan, target, max_shift);
  r.ncc = shifted_ncc(atlas.scan, target, r.shift);
  r.atlas = r.shift == Shift{0, 0, 0} ? atlas : shift_atlas(atlas, r.shift);
  return r;
}

ScalarVolume intensity_standardize(const ScalarVolume& v) {
  const std::size_t n = v.size();
  if (n == 0) return v;
  double mean = 0.0;
  for (double x : v.data()) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v.data()) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  ScalarVolume out(v.dims(), 0.0);
  if (!(var > 0.0)) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) * inv;
  return out;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& stem) {
  if (stem.extension() == ".json") return stem;
  return std::filesystem::path(stem.string() + ".json");
}

}  // namespace

void save_atlas(const std::filesystem::path& stem, const AtlasPair& atlas, const std::string& provenance,
                const Shift& shift) {
  atlas.validate();
  const std::filesystem::path base = stem.extension() == ".json" ? stem.parent_path() / stem.stem() : stem;
  const std::string name = base.filename().string();
  write_vol1(base.parent_path() / (name + "_scan.vol1"), atlas.scan);
  write_vol1(base.parent_path() / (name + "_labels.vol1"), atlas.labels);
  const Dims d = atlas.scan.dims();
  nlohmann::json j{{"classes", atlas.labels.classes()},
                   {"dims", {d.d, d.h, d.w}},
                   {"scan", name + "_scan.vol1"},
                   {"labels", name + "_labels.vol1"},
                   {"provenance", provenance},
                   {"shift", {shift[0], shift[1], shift[2]}}};
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(sidecar_path(base),
                   std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

AtlasPair load_atlas(const std::filesystem::path& stem) {
  const auto path = sidecar_path(stem);
  const auto raw = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(reinterpret_cast<const char*>(raw.data()),
                              reinterpret_cast<const char*>(raw.data()) + raw.size());
    const auto dir = path.parent_path();
    AtlasPair atlas{read_scalar_vol1(dir / j.at("scan").get<std::string>()),
                    read_prob_vol1(dir / j.at("labels").get<std::string>())};
    if (atlas.labels.classes() != j.at("classes").get<std::size_t>()) {
      fail(ErrorCode::ShapeMismatch, "atlas labels K differs from sidecar");
    }
    atlas.validate();
    return atlas;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadHeader, "atlas sidecar " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace atlascrf
