#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "atlascrf/checkpoint.hpp"
#include "atlascrf/error.hpp"
#include "atlascrf/train.hpp"
#include "support.hpp"

using namespace atlascrf;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.model = initial_model(3, Dims{3, 4, 5}, 7);
  std::mt19937_64 rng(2);
  for (double& w : ck.model.cam.prior.omega.data()) w = 0.05 + 0.01 * static_cast<double>(rng() % 10);
  ck.model.cam.mu(0, 1) = 0.37;
  ck.model.cam.prior.theta = 1.25;
  ck.model.cam.iters = 3;
  Gradients g = Gradients::zeros_like(ck.model.cam, Dims{3, 4, 5}, UnaryModel(ck.model.net));
  for (double& v : g.d_mu) v = 0.1;
  for (double& v : g.d_unary_params) v = -0.2;
  TrainConfig cfg;
  adam_step(ck.model, g, cfg, ck.optimizer);
  ck.stage = TrainStage::Joint;
  ck.epoch = 4;
  ck.seed = 99;
  return ck;
}

std::uint64_t fnv_text(const std::string& s) {
  return fnv1a64(std::as_bytes(std::span<const char>(s.data(), s.size())));
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv_text("") == 0xcbf29ce484222325ULL);
    CHECK(fnv_text("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv_text("foobar") == 0x85944171f73967e8ULL);
  }

  TEST_CASE("round trip within f32 precision") {
    TempDir tmp("atlascrf_ck_roundtrip");
    const Checkpoint ck = sample_checkpoint();
    save_checkpoint(tmp.path, ck);
    const Checkpoint back = load_checkpoint(tmp.path);
    CHECK(back.stage == TrainStage::Joint);
    CHECK(back.epoch == 4);
    CHECK(back.seed == 99);
    CHECK(back.model.cam.iters == 3);
    CHECK(back.model.cam.conn_prior == ck.model.cam.conn_prior);
    CHECK(back.model.cam.prior.theta == doctest::Approx(1.25).epsilon(1e-7));
    CHECK(test::max_abs_diff(back.model.cam.mu.values(), ck.model.cam.mu.values()) < 1e-6);
    CHECK(test::max_abs_diff(back.model.cam.prior.omega.data(), ck.model.cam.prior.omega.data()) < 1e-6);
    CHECK(test::max_abs_diff(back.model.net.values(), ck.model.net.values()) < 1e-6);
    CHECK(back.optimizer.step == ck.optimizer.step);
    REQUIRE(back.optimizer.groups.size() == ck.optimizer.groups.size());
    for (const auto& [name, mom] : ck.optimizer.groups) {
      CHECK(test::max_abs_diff(back.optimizer.groups.at(name).m, mom.m) < 1e-6);
      CHECK(test::max_abs_diff(back.optimizer.groups.at(name).v, mom.v) < 1e-6);
    }
  }

  TEST_CASE("corrupted block is an integrity error") {
    TempDir tmp("atlascrf_ck_corrupt");
    save_checkpoint(tmp.path, sample_checkpoint());
    {
      std::fstream f(tmp.path / "net.vol1", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(40);
      const char junk[4] = {1, 2, 3, 4};
      f.write(junk, 4);
    }
    try {
      load_checkpoint(tmp.path);
      FAIL("expected Integrity");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Integrity);
    }
  }

  TEST_CASE("missing manifest and malformed manifest") {
    TempDir tmp("atlascrf_ck_missing");
    std::filesystem::create_directories(tmp.path);
    try {
      load_checkpoint(tmp.path);
      FAIL("expected Io");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
    }
    std::ofstream(tmp.path / "manifest.json") << "{not json";
    try {
      load_checkpoint(tmp.path);
      FAIL("expected Integrity");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Integrity);
    }
  }
}
