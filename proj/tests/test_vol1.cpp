#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "atlascrf/error.hpp"
#include "atlascrf/vol1.hpp"
#include "support.hpp"

using namespace atlascrf;

namespace {

ScalarVolume f32_scalar(const Dims& d, std::mt19937_64& rng) {
  ScalarVolume v = test::random_scalar(d, rng, 50.0);
  for (double& x : v.data()) x = static_cast<float>(x);
  return v;
}

ErrorCode code_of(std::span<const std::byte> bytes) {
  try {
    decode_vol1(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("decode should have failed");
  return ErrorCode::InvalidArgument;
}

void put_u32(std::vector<std::byte>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
}

std::filesystem::path temp(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_SUITE("vol1") {
  TEST_CASE("header layout is little-endian and 24 bytes") {
    const ScalarVolume v(Dims{2, 3, 5}, 1.0);
    const auto b = encode_vol1(v);
    REQUIRE(b.size() == 24 + 4 * 30);
    CHECK(std::memcmp(b.data(), "VOL1", 4) == 0);
    CHECK(b[4] == std::byte{0});
    CHECK(b[5] == std::byte{0});
    CHECK(b[8] == std::byte{1});
    CHECK(b[12] == std::byte{2});
    CHECK(b[16] == std::byte{3});
    CHECK(b[20] == std::byte{5});
    const float one = 1.0f;
    CHECK(std::memcmp(b.data() + 24, &one, 4) == 0);
  }

  TEST_CASE("round trips are bit exact") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const Dims d{1 + rng() % 5, 1 + rng() % 5, 1 + rng() % 5};
      const ScalarVolume s = f32_scalar(d, rng);
      const auto sb = encode_vol1(s);
      CHECK(std::get<ScalarVolume>(decode_vol1(sb)) == s);
      CHECK(encode_vol1(std::get<ScalarVolume>(decode_vol1(sb))) == sb);

      ProbVolume p(3, d);
      for (double& x : p.data()) x = static_cast<float>(test::random_scalar(Dims{1, 1, 1}, rng)[0]);
      const auto pb = encode_vol1(p);
      CHECK(std::get<ProbVolume>(decode_vol1(pb)).data().size() == p.data().size());
      CHECK(encode_vol1(std::get<ProbVolume>(decode_vol1(pb))) == pb);

      const LabelMap m = test::random_labels(d, 7, rng);
      const auto mb = encode_vol1(m, 7);
      CHECK(std::get<LabelMap>(decode_vol1(mb)) == m);
      CHECK(decode_vol1_header(mb).classes == 7);
    }
  }

  TEST_CASE("file round trip") {
    std::mt19937_64 rng(5);
    const ScalarVolume s = f32_scalar(Dims{3, 4, 5}, rng);
    const auto path = temp("atlascrf_vol1_roundtrip.vol1");
    write_vol1(path, s);
    CHECK(read_scalar_vol1(path) == s);
    CHECK_THROWS_AS(read_label_vol1(path), Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("normalized flag is inferred from the payload") {
    ProbVolume p(2, Dims{1, 1, 2}, std::vector<double>{0.25, 0.5, 0.75, 0.5}, true);
    CHECK(std::get<ProbVolume>(decode_vol1(encode_vol1(p))).normalized());
    ProbVolume raw(2, Dims{1, 1, 2}, std::vector<double>{2.0, -1.0, 0.5, 3.0});
    CHECK_FALSE(std::get<ProbVolume>(decode_vol1(encode_vol1(raw))).normalized());
  }

  TEST_CASE("malformed inputs map to specific errors") {
    const auto good = encode_vol1(ScalarVolume(Dims{2, 2, 2}, 3.0));
    auto b = good;
    b[0] = std::byte{'X'};
    CHECK(code_of(b) == ErrorCode::BadMagic);

    b = good;
    b.resize(20);
    CHECK(code_of(b) == ErrorCode::Truncated);

    b = good;
    b.pop_back();
    CHECK(code_of(b) == ErrorCode::Truncated);

    b = good;
    b.push_back(std::byte{0});
    CHECK(code_of(b) == ErrorCode::BadHeader);

    b = good;
    b[6] = std::byte{1};
    CHECK(code_of(b) == ErrorCode::BadHeader);

    b = good;
    b[4] = std::byte{9};
    CHECK(code_of(b) == ErrorCode::BadHeader);

    b = good;
    b[5] = std::byte{1};  // u16 payload for a scalar volume
    CHECK(code_of(b) == ErrorCode::BadHeader);

    b = good;
    put_u32(b, 8, 2);  // scalar with K = 2
    CHECK(code_of(b) == ErrorCode::BadHeader);

    b = good;
    put_u32(b, 12, 4096);
    put_u32(b, 16, 4096);
    put_u32(b, 20, 4096);
    CHECK(code_of(b) == ErrorCode::DimOverflow);

    b = good;
    put_u32(b, 12, 0);
    CHECK(code_of(b) == ErrorCode::BadHeader);
  }

  TEST_CASE("non-finite and out-of-range values are refused at encode time") {
    ScalarVolume s(Dims{1, 1, 2}, 0.0);
    s[1] = 1e300;
    CHECK_THROWS_AS(encode_vol1(s), Error);
    s[1] = std::nan("");
    CHECK_THROWS_AS(encode_vol1(s), Error);
  }

  TEST_CASE("missing file is an I/O error") {
    try {
      read_vol1(temp("atlascrf_does_not_exist.vol1"));
      FAIL("expected Io");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
    }
  }
}
