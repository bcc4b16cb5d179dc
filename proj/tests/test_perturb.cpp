#include <doctest.h>

#include <cmath>
#include <cstring>

#include "atlascrf/error.hpp"
#include "atlascrf/perturb.hpp"
#include "support.hpp"

using namespace atlascrf;

namespace {

std::size_t count_ones(const LabelMap& m) {
  std::size_t n = 0;
  for (Label v : m.data()) n += v != 0;
  return n;
}

}  // namespace

TEST_SUITE("perturb") {
  TEST_CASE("zero blobs give an empty mask") {
    LesionSpec spec;
    spec.count = 0;
    CHECK(count_ones(gen_lesion_mask(Dims{8, 8, 8}, spec)) == 0);
  }

  TEST_CASE("single blob has the lattice ellipsoid cardinality") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      LesionSpec spec;
      spec.seed = seed;
      spec.radius_min = spec.radius_max = 2;
      const Dims d{16, 16, 16};
      const auto blobs = sample_lesions(d, spec);
      REQUIRE(blobs.size() == 1);
      const auto c = blobs[0].center;
      std::size_t expected = 0;
      for (long z = c[0] - 2; z <= c[0] + 2; ++z)
        for (long y = c[1] - 2; y <= c[1] + 2; ++y)
          for (long x = c[2] - 2; x <= c[2] + 2; ++x) {
            const double q = ((z - c[0]) * (z - c[0]) + (y - c[1]) * (y - c[1]) + (x - c[2]) * (x - c[2])) / 4.0;
            expected += q <= 1.0;
          }
      CHECK(expected == 33);
      CHECK(count_ones(gen_lesion_mask(d, spec)) == expected);
    }
  }

  TEST_CASE("blobs stay inside and masks are deterministic") {
    const Dims d{12, 10, 14};
    LesionSpec spec;
    spec.seed = 3;
    spec.count = 4;
    CHECK(gen_lesion_mask(d, spec) == gen_lesion_mask(d, spec));
    for (const auto& e : sample_lesions(d, spec))
      for (int a = 0; a < 3; ++a) {
        const long extent = static_cast<long>(a == 0 ? d.d : a == 1 ? d.h : d.w);
        CHECK(e.center[a] - e.radii[a] >= 0);
        CHECK(e.center[a] + e.radii[a] <= extent - 1);
        CHECK(e.radii[a] >= spec.radius_min);
        CHECK(e.radii[a] <= spec.radius_max);
      }
    spec.seed = 4;
    CHECK_FALSE(gen_lesion_mask(d, spec) == gen_lesion_mask(d, LesionSpec{3, 4}));
  }

  TEST_CASE("impossible geometry and bad specs") {
    LesionSpec spec;
    spec.radius_min = spec.radius_max = 5;
    CHECK_THROWS_AS(gen_lesion_mask(Dims{8, 8, 8}, spec), Error);
    LesionSpec bad;
    bad.noise_low = 0.6;
    bad.noise_high = 0.5;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = LesionSpec{};
    bad.radius_min = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = LesionSpec{};
    bad.noise_high = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("empty mask and zero range leave the scan unchanged") {
    std::mt19937_64 rng(1);
    const Dims d{6, 6, 6};
    const ScalarVolume scan = test::random_scalar(d, rng);
    CHECK(apply_pathology(scan, LabelMap(d), LesionSpec{}, 1) == scan);
    LesionSpec zero;
    zero.noise_low = zero.noise_high = 0.0;
    LabelMap full(d, std::vector<Label>(d.voxels(), 1));
    CHECK(apply_pathology(scan, full, zero, 1) == scan);
    CHECK_THROWS_AS(apply_pathology(scan, LabelMap(Dims{6, 6, 5}), LesionSpec{}, 1), Error);
  }

  TEST_CASE("full mask statistics and clamping") {
    const Dims d{10, 10, 10};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      ScalarVolume scan(d);
      std::uniform_real_distribution<double> u(0.0, 100.0);
      for (double& v : scan.data()) v = u(rng);
      const double lo = *std::min_element(scan.data().begin(), scan.data().end());
      const double hi = *std::max_element(scan.data().begin(), scan.data().end());
      LabelMap full(d, std::vector<Label>(d.voxels(), 1));
      const ScalarVolume out = apply_pathology(scan, full, LesionSpec{}, seed);
      double change = 0.0;
      for (std::size_t i = 0; i < d.voxels(); ++i) {
        CHECK(out[i] >= lo);
        CHECK(out[i] <= hi);
        change += std::abs(out[i] - scan[i]);
      }
      change /= static_cast<double>(d.voxels());
      CHECK(change > 0.0);
      CHECK(change <= 0.5 * hi);
    }
  }

  TEST_CASE("outside the mask is bit-identical and output is reproducible") {
    std::mt19937_64 rng(2);
    const Dims d{12, 12, 12};
    const ScalarVolume scan = test::random_scalar(d, rng, 10.0);
    LesionSpec spec;
    spec.seed = 9;
    spec.count = 3;
    const LabelMap mask = gen_lesion_mask(d, spec);
    const ScalarVolume a = apply_pathology(scan, mask, spec, 5), b = apply_pathology(scan, mask, spec, 5);
    CHECK(a == b);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < d.voxels(); ++i) {
      if (mask[i] == 0) {
        const double x = a[i], y = scan[i];
        CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
      } else {
        changed += a[i] != scan[i];
      }
    }
    CHECK(changed > 0);
    CHECK_FALSE(apply_pathology(scan, mask, spec, 6) == a);
  }

  TEST_CASE("region constraint places every center on the region") {
    const Dims d{16, 16, 16};
    LabelMap region(d);
    for (std::size_t z = 6; z < 10; ++z)
      for (std::size_t y = 6; y < 10; ++y)
        for (std::size_t x = 6; x < 10; ++x) region.at(z, y, x) = 2;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      LesionSpec spec;
      spec.seed = seed;
      spec.count = 3;
      for (const auto& e : sample_lesions(d, spec, &region)) {
        CHECK(region.at(static_cast<std::size_t>(e.center[0]), static_cast<std::size_t>(e.center[1]),
                        static_cast<std::size_t>(e.center[2])) != 0);
      }
      CHECK(gen_lesion_mask(d, spec, &region) == gen_lesion_mask(d, spec, &region));
    }
    LesionSpec spec;
    const LabelMap small(Dims{8, 8, 8});
    CHECK_THROWS_AS(sample_lesions(d, spec, &small), Error);
    const LabelMap empty(d);
    CHECK_THROWS_AS(sample_lesions(d, spec, &empty), Error);
  }
}
