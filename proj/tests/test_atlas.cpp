#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "atlascrf/atlas.hpp"
#include "atlascrf/error.hpp"
#include "support.hpp"

using namespace atlascrf;

namespace {

AtlasBuildInput random_input(std::mt19937_64& rng, std::size_t n, const Dims& d, std::size_t k) {
  AtlasBuildInput in;
  in.classes = k;
  for (std::size_t i = 0; i < n; ++i) {
    in.scans.push_back(test::random_scalar(d, rng));
    in.labels.push_back(test::random_labels(d, k, rng));
  }
  return in;
}

double mean(const ScalarVolume& v) {
  double s = 0.0;
  for (double x : v.data()) s += x;
  return s / static_cast<double>(v.data().size());
}

}  // namespace

TEST_SUITE("atlas") {
  TEST_CASE("identical pairs reproduce the pair") {
    std::mt19937_64 rng(1);
    const Dims d{3, 4, 5};
    const ScalarVolume s = test::random_scalar(d, rng);
    const LabelMap l = test::random_labels(d, 3, rng);
    AtlasBuildInput in{{s, s, s}, {l, l, l}, 3};
    const AtlasPair a = build_atlas(in);
    CHECK(test::max_abs_diff(a.scan.data(), s.data()) < 1e-15);
    CHECK(a.labels == one_hot(l, 3));
  }

  TEST_CASE("two maps differing at one voxel") {
    const Dims d{1, 1, 3};
    AtlasBuildInput in{{ScalarVolume(d, 1.0), ScalarVolume(d, 3.0)},
                       {LabelMap(d, std::vector<Label>{0, 2, 1}), LabelMap(d, std::vector<Label>{1, 2, 1})},
                       3};
    const AtlasPair a = build_atlas(in);
    CHECK(a.labels.at(0, 0) == 0.5);
    CHECK(a.labels.at(1, 0) == 0.5);
    CHECK(a.labels.at(2, 0) == 0.0);
    CHECK(a.labels.at(2, 1) == 1.0);
    CHECK(a.scan[0] == 2.0);
    CHECK(a.labels.normalized());
  }

  TEST_CASE("channels sum to one and order does not matter") {
    std::mt19937_64 rng(2);
    AtlasBuildInput in = random_input(rng, 3, Dims{4, 4, 4}, 4);
    const AtlasPair a = build_atlas(in);
    CHECK(max_normalization_error(a.labels) < 1e-9);
    std::swap(in.scans[0], in.scans[2]);
    std::swap(in.labels[0], in.labels[2]);
    std::swap(in.scans[0], in.scans[1]);
    std::swap(in.labels[0], in.labels[1]);
    const AtlasPair b = build_atlas(in);
    CHECK(test::max_abs_diff(a.scan.data(), b.scan.data()) < 1e-15);
    CHECK(test::max_abs_diff(a.labels.data(), b.labels.data()) < 1e-15);
  }

  TEST_CASE("build errors") {
    CHECK_THROWS_AS(build_atlas(AtlasBuildInput{{}, {}, 2}), Error);
    std::mt19937_64 rng(3);
    AtlasBuildInput in = random_input(rng, 2, Dims{2, 2, 2}, 2);
    in.scans[1] = ScalarVolume(Dims{2, 2, 3});
    CHECK_THROWS_AS(build_atlas(in), Error);
    in = random_input(rng, 2, Dims{2, 2, 2}, 2);
    in.labels[0][0] = 5;
    CHECK_THROWS_AS(build_atlas(in), Error);
  }

  TEST_CASE("translation recovery") {
    std::mt19937_64 rng(4);
    const Dims d{10, 10, 10};
    AtlasPair atlas{test::random_scalar(d, rng), one_hot(test::random_labels(d, 3, rng), 3)};
    const Shift s{1, 0, -2};
    const ScalarVolume target = shift_atlas(atlas, s).scan;
    CHECK(best_translation(atlas.scan, target, 2) == s);
    CHECK(best_translation(atlas.scan, target, 3) == s);
    const AlignResult r = align_translation(atlas, target, 2);
    CHECK(r.shift == s);
    CHECK(r.ncc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.atlas.labels.at(0, d.index(0, 0, 0)) == doctest::Approx(1.0 / 3.0));
    CHECK(max_normalization_error(r.atlas.labels) < 1e-12);
    CHECK(r.atlas.labels.at(1, d.index(5, 5, 5)) == atlas.labels.at(1, d.index(4, 5, 7)));
  }

  TEST_CASE("identity alignment and max_shift zero") {
    std::mt19937_64 rng(5);
    const Dims d{5, 6, 7};
    AtlasPair atlas{test::random_scalar(d, rng), one_hot(test::random_labels(d, 2, rng), 2)};
    CHECK(best_translation(atlas.scan, atlas.scan, 2) == Shift{0, 0, 0});
    const AlignResult r = align_translation(atlas, test::random_scalar(d, rng), 0);
    CHECK(r.shift == Shift{0, 0, 0});
    CHECK(r.atlas.scan == atlas.scan);
    CHECK(r.atlas.labels == atlas.labels);
    CHECK_THROWS_AS(best_translation(atlas.scan, atlas.scan, -1), Error);
  }

  TEST_CASE("ncc edge cases") {
    const Dims d{2, 2, 2};
    std::mt19937_64 rng(6);
    const ScalarVolume r = test::random_scalar(d, rng);
    CHECK(shifted_ncc(ScalarVolume(d, 4.0), r, Shift{0, 0, 0}) == 0.0);
    CHECK(shifted_ncc(r, r, Shift{0, 0, 0}) == doctest::Approx(1.0));
    ScalarVolume neg = r;
    for (double& v : neg.data()) v = -2.0 * v + 1.0;
    CHECK(shifted_ncc(r, neg, Shift{0, 0, 0}) == doctest::Approx(-1.0));
  }

  TEST_CASE("standardization") {
    const ScalarVolume flat = intensity_standardize(ScalarVolume(Dims{2, 3, 4}, 7.5));
    for (double v : flat.data()) CHECK(v == 0.0);
    std::mt19937_64 rng(7);
    ScalarVolume v = test::random_scalar(Dims{6, 5, 4}, rng, 30.0);
    for (double& x : v.data()) x += 100.0;
    const ScalarVolume s = intensity_standardize(v);
    const double m = mean(s);
    double var = 0.0;
    for (double x : s.data()) var += (x - m) * (x - m);
    var /= static_cast<double>(s.data().size());
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
    CHECK(test::max_abs_diff(intensity_standardize(s).data(), s.data()) < 1e-6);
  }

  TEST_CASE("save and load") {
    const auto dir = std::filesystem::temp_directory_path() / "atlascrf_atlas_io";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(8);
    const AtlasPair a = build_atlas(random_input(rng, 2, Dims{3, 3, 2}, 3));
    save_atlas(dir / "atlas", a, "test");
    for (const auto& p : {dir / "atlas", dir / "atlas.json"}) {
      const AtlasPair b = load_atlas(p);
      CHECK(test::max_abs_diff(a.scan.data(), b.scan.data()) < 1e-6);
      CHECK(test::max_abs_diff(a.labels.data(), b.labels.data()) < 1e-6);
      CHECK(b.labels.classes() == 3);
    }
    CHECK_THROWS_AS(load_atlas(dir / "nothing"), Error);
    std::filesystem::remove_all(dir);
  }
}
