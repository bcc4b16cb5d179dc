#include <doctest.h>

#include <cmath>

#include "atlascrf/error.hpp"
#include "atlascrf/volume.hpp"
#include "support.hpp"

using namespace atlascrf;

TEST_SUITE("volume") {
  TEST_CASE("C-order indexing") {
    const Dims d{2, 3, 4};
    CHECK(d.voxels() == 24);
    CHECK(d.index(0, 0, 1) == 1);
    CHECK(d.index(0, 1, 0) == 4);
    CHECK(d.index(1, 0, 0) == 12);
    CHECK(d.contains(1, 2, 3));
    CHECK_FALSE(d.contains(2, 0, 0));
    CHECK_FALSE(d.contains(0, -1, 0));
  }

  TEST_CASE("constructors check payload size") {
    CHECK_THROWS_AS(ScalarVolume(Dims{2, 2, 2}, std::vector<double>(7)), Error);
    CHECK_THROWS_AS(ProbVolume(2, Dims{2, 2, 2}, std::vector<double>(15)), Error);
    CHECK_THROWS_AS(LabelMap(Dims{1, 1, 3}, std::vector<Label>(2)), Error);
  }

  TEST_CASE("label range check names the voxel") {
    LabelMap m(Dims{1, 1, 3}, std::vector<Label>{0, 1, 5});
    try {
      m.check_classes(3);
      FAIL("expected OutOfRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::OutOfRange);
      CHECK(std::string(e.what()).find("voxel") != std::string::npos);
    }
    CHECK_NOTHROW(m.check_classes(6));
  }

  TEST_CASE("softmax rows sum to one and preserve order") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const ProbVolume z = test::random_logits(4, Dims{2, 3, 2}, rng, 10.0);
      const ProbVolume q = softmax_channels(z);
      CHECK(q.normalized());
      CHECK(max_normalization_error(q) < 1e-12);
      for (std::size_t i = 0; i < q.voxels(); ++i)
        for (std::size_t l = 1; l < 4; ++l) CHECK((z.at(l, i) > z.at(0, i)) == (q.at(l, i) > q.at(0, i)));
    }
  }

  TEST_CASE("softmax is shift invariant and survives huge logits") {
    const Dims d{1, 1, 1};
    const ProbVolume a = softmax_channels(ProbVolume(2, d, std::vector<double>{1000.0, 999.0}));
    const ProbVolume b = softmax_channels(ProbVolume(2, d, std::vector<double>{1.0, 0.0}));
    CHECK(a.at(0, 0) == doctest::Approx(b.at(0, 0)).epsilon(1e-15));
  }

  TEST_CASE("softmax reports the non-finite voxel") {
    ProbVolume z(2, Dims{1, 1, 3});
    z.at(1, 2) = INFINITY;
    try {
      softmax_channels(z);
      FAIL("expected NonFinite");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFinite);
      CHECK(std::string(e.what()).find("voxel 2") != std::string::npos);
    }
  }

  TEST_CASE("one-hot and argmax are inverse; ties go to the lowest class") {
    std::mt19937_64 rng(1);
    const LabelMap m = test::random_labels(Dims{3, 3, 3}, 4, rng);
    CHECK(argmax_labels(one_hot(m, 4)) == m);
    const ProbVolume tie(3, Dims{1, 1, 1}, std::vector<double>{0.2, 0.4, 0.4});
    CHECK(argmax_labels(tie)[0] == 1);
  }

  TEST_CASE("atlas pair validation") {
    AtlasPair a{ScalarVolume(Dims{2, 2, 2}), ProbVolume(2, Dims{2, 2, 2}, 0.5, true)};
    CHECK_NOTHROW(a.validate());
    a.labels = ProbVolume(2, Dims{2, 2, 3}, 0.5, true);
    CHECK_THROWS_AS(a.validate(), Error);
  }
}
