#include "atlascrf/vol1.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "atlascrf/error.hpp"

namespace atlascrf {
namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

template <class T>
void put_le(std::vector<std::byte>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::byte raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  out.insert(out.end(), std::begin(raw), std::end(raw));
}

template <class T>
T get_le(std::span<const std::byte> bytes, std::size_t offset) {
  std::byte raw[sizeof(T)];
  std::memcpy(raw, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

std::vector<std::byte> header_bytes(VolumeKind kind, VolumeDtype dtype, std::uint32_t classes,
                                    const Dims& dims, std::size_t payload_bytes) {
  std::vector<std::byte> out;
  out.reserve(kVol1HeaderBytes + payload_bytes);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(kind));
  out.push_back(static_cast<std::byte>(dtype));
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint32_t>(out, classes);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.d));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.h));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.w));
  return out;
}

void check_encodable(const Dims& dims, std::uint64_t classes) {
  constexpr std::uint64_t kMax = 0xFFFFFFFFu;
  if (dims.d > kMax || dims.h > kMax || dims.w > kMax || classes > kMax) {
    fail(ErrorCode::DimOverflow, "volume " + dims.str() + " does not fit u32 header fields");
  }
}

void put_f32_payload(std::vector<std::byte>& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    if (!std::isfinite(f)) {
      fail(ErrorCode::NonFinite, "VOL1 encode: value at index " + std::to_string(i) + " is not a finite f32");
    }
    put_le<float>(out, f);
  }
}

std::vector<double> get_f32_payload(std::span<const std::byte> bytes, std::size_t count) {
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = static_cast<double>(get_le<float>(bytes, kVol1HeaderBytes + 4 * i));
  }
  return values;
}

bool sums_to_one(const ProbVolume& v, double tol) {
  const std::size_t k = v.classes();
  const std::size_t n = v.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
      const double p = v.at(l, i);
      if (p < 0.0) return false;
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace

std::vector<std::byte> encode_vol1(const ScalarVolume& volume) {
  check_encodable(volume.dims(), 1);
  auto out = header_bytes(VolumeKind::Scalar, VolumeDtype::F32, 1, volume.dims(), 4 * volume.size());
  put_f32_payload(out, volume.data());
  return out;
}

std::vector<std::byte> encode_vol1(const ProbVolume& volume) {
  check_encodable(volume.dims(), volume.classes());
  auto out = header_bytes(VolumeKind::Prob, VolumeDtype::F32, static_cast<std::uint32_t>(volume.classes()),
                          volume.dims(), 4 * volume.data().size());
  put_f32_payload(out, volume.data());
  return out;
}

std::vector<std::byte> encode_vol1(const LabelMap& labels, std::uint32_t classes) {
  check_encodable(labels.dims(), classes);
  auto out = header_bytes(VolumeKind::Label, VolumeDtype::U16, classes, labels.dims(), 2 * labels.size());
  for (Label l : labels.data()) put_le<std::uint16_t>(out, l);
  return out;
}

Vol1Header decode_vol1_header(std::span<const std::byte> bytes) {
  if (bytes.size() < 4) fail(ErrorCode::Truncated, "VOL1: file shorter than magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "VOL1: magic mismatch");
  if (bytes.size() < kVol1HeaderBytes) fail(ErrorCode::Truncated, "VOL1: truncated header");

  const auto kind = static_cast<std::uint8_t>(bytes[4]);
  const auto dtype = static_cast<std::uint8_t>(bytes[5]);
  const auto reserved = get_le<std::uint16_t>(bytes, 6);
  if (kind > 2) fail(ErrorCode::BadHeader, "VOL1: unknown kind " + std::to_string(kind));
  if (dtype > 1) fail(ErrorCode::BadHeader, "VOL1: unknown dtype " + std::to_string(dtype));
  if (reserved != 0) fail(ErrorCode::BadHeader, "VOL1: reserved field is non-zero");

  Vol1Header h;
  h.kind = static_cast<VolumeKind>(kind);
  h.dtype = static_cast<VolumeDtype>(dtype);
  h.classes = get_le<std::uint32_t>(bytes, 8);
  h.dims = Dims{get_le<std::uint32_t>(bytes, 12), get_le<std::uint32_t>(bytes, 16),
                get_le<std::uint32_t>(bytes, 20)};

  const bool label = h.kind == VolumeKind::Label;
  if (label != (h.dtype == VolumeDtype::U16)) {
    fail(ErrorCode::BadHeader, "VOL1: dtype does not match kind");
  }
  if (h.kind == VolumeKind::Scalar && h.classes != 1) fail(ErrorCode::BadHeader, "VOL1: scalar volume with K != 1");
  if (h.kind == VolumeKind::Prob && h.classes == 0) fail(ErrorCode::BadHeader, "VOL1: probability volume with K = 0");

  // All factors are < 2^32, so products of two fit in u64; check before the third.
  const std::uint64_t elem = label ? 2 : 4;
  const std::uint64_t channels = label ? 1 : h.classes;
  std::uint64_t bytes_needed = elem * channels;
  for (std::uint64_t extent : {std::uint64_t{h.dims.d}, std::uint64_t{h.dims.h}, std::uint64_t{h.dims.w}}) {
    if (extent != 0 && bytes_needed > kVol1MaxPayloadBytes / extent) {
      fail(ErrorCode::DimOverflow, "VOL1: declared dims " + h.dims.str() + " exceed the 4 GiB payload limit");
    }
    bytes_needed *= extent;
  }
  if (bytes_needed > kVol1MaxPayloadBytes) {
    fail(ErrorCode::DimOverflow, "VOL1: declared dims " + h.dims.str() + " exceed the 4 GiB payload limit");
  }
  if (h.dims.voxels() == 0) fail(ErrorCode::BadHeader, "VOL1: empty volume");
  if (bytes.size() < kVol1HeaderBytes + bytes_needed) {
    fail(ErrorCode::Truncated, "VOL1: payload has " + std::to_string(bytes.size() - kVol1HeaderBytes) +
                                   " bytes, header declares " + std::to_string(bytes_needed));
  }
  if (bytes.size() > kVol1HeaderBytes + bytes_needed) {
    fail(ErrorCode::BadHeader, "VOL1: trailing bytes after payload");
  }
  return h;
}

AnyVolume decode_vol1(std::span<const std::byte> bytes) {
  const Vol1Header h = decode_vol1_header(bytes);
  const std::size_t n = h.dims.voxels();
  switch (h.kind) {
    case VolumeKind::Scalar:
      return ScalarVolume(h.dims, get_f32_payload(bytes, n));
    case VolumeKind::Prob: {
      ProbVolume v(h.classes, h.dims, get_f32_payload(bytes, n * h.classes));
      v.set_normalized(sums_to_one(v, 1e-5));
      return v;
    }
    case VolumeKind::Label: {
      std::vector<Label> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = get_le<std::uint16_t>(bytes, kVol1HeaderBytes + 2 * i);
      LabelMap map(h.dims, std::move(labels));
      if (h.classes != 0) map.check_classes(h.classes);
      return map;
    }
  }
  fail(ErrorCode::BadHeader, "VOL1: unknown kind");
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::Io, "read error on " + path.string());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write error on " + path.string());
}

void write_vol1(const std::filesystem::path& path, const ScalarVolume& volume) {
  write_file_bytes(path, encode_vol1(volume));
}

void write_vol1(const std::filesystem::path& path, const ProbVolume& volume) {
  write_file_bytes(path, encode_vol1(volume));
}

void write_vol1(const std::filesystem::path& path, const LabelMap& labels, std::uint32_t classes) {
  write_file_bytes(path, encode_vol1(labels, classes));
}

AnyVolume read_vol1(const std::filesystem::path& path) { return decode_vol1(read_file_bytes(path)); }

namespace {

template <class T>
T read_kind(const std::filesystem::path& path, const char* expected) {
  AnyVolume any = read_vol1(path);
  if (auto* v = std::get_if<T>(&any)) return std::move(*v);
  fail(ErrorCode::BadHeader, path.string() + ": expected a " + expected + " volume");
}

}  // namespace

ScalarVolume read_scalar_vol1(const std::filesystem::path& path) { return read_kind<ScalarVolume>(path, "scalar"); }
ProbVolume read_prob_vol1(const std::filesystem::path& path) { return read_kind<ProbVolume>(path, "probability"); }
LabelMap read_label_vol1(const std::filesystem::path& path) { return read_kind<LabelMap>(path, "label"); }

}  // namespace atlascrf
