#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "atlascrf/volume.hpp"

namespace atlascrf {

// VOL1 layout, all little-endian:
//   "VOL1" | u8 kind | u8 dtype | u16 reserved=0 | u32 K | u32 D | u32 H | u32 W | payload
// Scalar and probability payloads are f32, label payloads u16. Probability
// payloads are channel-major, every plane in C order.

enum class VolumeKind : std::uint8_t { Scalar = 0, Prob = 1, Label = 2 };
enum class VolumeDtype : std::uint8_t { F32 = 0, U16 = 1 };

struct Vol1Header {
  VolumeKind kind = VolumeKind::Scalar;
  VolumeDtype dtype = VolumeDtype::F32;
  std::uint32_t classes = 1;
  Dims dims{};
};

inline constexpr std::size_t kVol1HeaderBytes = 24;
inline constexpr std::uint64_t kVol1MaxPayloadBytes = std::uint64_t{1} << 32;

using AnyVolume = std::variant<ScalarVolume, ProbVolume, LabelMap>;

std::vector<std::byte> encode_vol1(const ScalarVolume& volume);
std::vector<std::byte> encode_vol1(const ProbVolume& volume);
/// classes is recorded in the K field; 0 means "not declared".
std::vector<std::byte> encode_vol1(const LabelMap& labels, std::uint32_t classes = 0);

Vol1Header decode_vol1_header(std::span<const std::byte> bytes);
AnyVolume decode_vol1(std::span<const std::byte> bytes);

void write_vol1(const std::filesystem::path& path, const ScalarVolume& volume);
void write_vol1(const std::filesystem::path& path, const ProbVolume& volume);
void write_vol1(const std::filesystem::path& path, const LabelMap& labels, std::uint32_t classes = 0);

AnyVolume read_vol1(const std::filesystem::path& path);
ScalarVolume read_scalar_vol1(const std::filesystem::path& path);
/// The normalized flag is restored when every voxel sums to 1 within 1e-5.
ProbVolume read_prob_vol1(const std::filesystem::path& path);
LabelMap read_label_vol1(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace atlascrf
