#include "atlascrf/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "atlascrf/error.hpp"
#include "atlascrf/vol1.hpp"

namespace atlascrf {
namespace {

using nlohmann::json;

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "atlascrf-checkpoint";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ScalarVolume as_row(std::span<const double> values) {
  return ScalarVolume(Dims{1, 1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

class BlockWriter {
 public:
  explicit BlockWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void put(const std::string& name, const ScalarVolume& v) {
    const auto bytes = encode_vol1(v);
    const std::string file = name + ".vol1";
    write_file_bytes(dir_ / file, bytes);
    blocks_[name] = json{{"file", file},
                         {"shape", {v.dims().d, v.dims().h, v.dims().w}},
                         {"fnv1a", hex64(fnv1a64(bytes))}};
  }

  json blocks() const { return blocks_; }

 private:
  std::filesystem::path dir_;
  json blocks_ = json::object();
};

class BlockReader {
 public:
  BlockReader(std::filesystem::path dir, json blocks) : dir_(std::move(dir)), blocks_(std::move(blocks)) {}

  bool has(const std::string& name) const { return blocks_.contains(name); }

  ScalarVolume get(const std::string& name, std::size_t expected) const {
    if (!blocks_.contains(name)) fail(ErrorCode::Integrity, "checkpoint block '" + name + "' missing from manifest");
    const json& b = blocks_.at(name);
    const auto bytes = read_file_bytes(dir_ / b.at("file").get<std::string>());
    if (hex64(fnv1a64(bytes)) != b.at("fnv1a").get<std::string>()) {
      fail(ErrorCode::Integrity, "checkpoint block '" + name + "' fails its hash check");
    }
    ScalarVolume v;
    try {
      v = std::get<ScalarVolume>(decode_vol1(bytes));
    } catch (const Error& e) {
      fail(ErrorCode::Integrity, "checkpoint block '" + name + "': " + e.what());
    } catch (const std::bad_variant_access&) {
      fail(ErrorCode::Integrity, "checkpoint block '" + name + "' is not a scalar block");
    }
    const auto shape = b.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3 || Dims{shape[0], shape[1], shape[2]} != v.dims() || v.size() != expected) {
      fail(ErrorCode::Integrity, "checkpoint block '" + name + "' has shape " + v.dims().str() + ", expected " +
                                     std::to_string(expected) + " values");
    }
    return v;
  }

  std::vector<double> values(const std::string& name, std::size_t expected) const {
    const ScalarVolume v = get(name, expected);
    return std::vector<double>(v.data().begin(), v.data().end());
  }

 private:
  std::filesystem::path dir_;
  json blocks_;
};

json conn_json(const Connectivity& c) { return json{{"size", c.size}, {"dilation", c.dilation}}; }

Connectivity conn_from(const json& j) { return Connectivity{j.at("size").get<int>(), j.at("dilation").get<int>()}; }

}  // namespace

std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const CamParams& cam = ck.model.cam;
  const std::size_t k = cam.classes();

  BlockWriter w(dir);
  w.put("mu", as_row(cam.mu.values()));
  if (cam.mu_prior) w.put("mu_prior", as_row(cam.mu_prior->values()));
  w.put("omega_p", cam.prior.omega);
  w.put("omega_s", as_row(cam.smooth.omega));
  w.put("net", as_row(ck.model.net.values()));
  json moments = json::array();
  for (const auto& [name, m] : ck.optimizer.groups) {
    w.put("adam_m_" + name, as_row(m.m));
    w.put("adam_v_" + name, as_row(m.v));
    moments.push_back(json{{"group", name}, {"size", m.m.size()}});
  }

  const Dims d = cam.prior.omega.dims();
  json manifest{
      {"format", kFormat},
      {"version", 1},
      {"classes", k},
      {"dims", {d.d, d.h, d.w}},
      {"stage", std::string(to_string(ck.stage))},
      {"epoch", ck.epoch},
      {"seed", ck.seed},
      {"theta_p", cam.prior.theta},
      {"theta_s", cam.smooth.theta},
      {"iters", cam.iters},
      {"conn_prior", conn_json(cam.conn_prior)},
      {"conn_smooth", conn_json(cam.conn_smooth)},
      {"enable_prior", cam.enable_prior},
      {"enable_smooth", cam.enable_smooth},
      {"net_parameters", ck.model.net.values().size()},
      {"optimizer", {{"step", ck.optimizer.step}, {"moments", moments}}},
      {"blocks", w.blocks()},
  };
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir / kManifest,
                   std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / kManifest;
  if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "checkpoint manifest not found: " + path.string());
  const auto raw = read_file_bytes(path);
  json manifest;
  try {
    manifest = json::parse(reinterpret_cast<const char*>(raw.data()), reinterpret_cast<const char*>(raw.data()) + raw.size());
  } catch (const json::exception& e) {
    fail(ErrorCode::Integrity, std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  try {
    if (manifest.at("format").get<std::string>() != kFormat) fail(ErrorCode::Integrity, "not an atlascrf checkpoint");
    const auto k = manifest.at("classes").get<std::size_t>();
    const auto dv = manifest.at("dims").get<std::vector<std::size_t>>();
    if (dv.size() != 3) fail(ErrorCode::Integrity, "checkpoint dims must have 3 entries");
    const Dims dims{dv[0], dv[1], dv[2]};
    BlockReader r(dir, manifest.at("blocks"));

    CamParams& cam = ck.model.cam;
    cam.mu = Compatibility(k, r.values("mu", k * k));
    if (r.has("mu_prior")) cam.mu_prior = Compatibility(k, r.values("mu_prior", k * k));
    cam.prior.omega = r.get("omega_p", dims.voxels());
    cam.prior.omega = ScalarVolume(dims, std::vector<double>(cam.prior.omega.data().begin(), cam.prior.omega.data().end()));
    cam.smooth.omega = r.values("omega_s", k);
    cam.prior.theta = manifest.at("theta_p").get<double>();
    cam.smooth.theta = manifest.at("theta_s").get<double>();
    cam.iters = manifest.at("iters").get<int>();
    cam.conn_prior = conn_from(manifest.at("conn_prior"));
    cam.conn_smooth = conn_from(manifest.at("conn_smooth"));
    cam.enable_prior = manifest.at("enable_prior").get<bool>();
    cam.enable_smooth = manifest.at("enable_smooth").get<bool>();
    const auto n = manifest.at("net_parameters").get<std::size_t>();
    if (n != TinyNetParams::parameter_count(k)) fail(ErrorCode::Integrity, "net parameter count does not match K");
    ck.model.net = TinyNetParams(k, r.values("net", n));

    ck.optimizer.step = manifest.at("optimizer").at("step").get<std::int64_t>();
    for (const json& m : manifest.at("optimizer").at("moments")) {
      const auto name = m.at("group").get<std::string>();
      const auto size = m.at("size").get<std::size_t>();
      ck.optimizer.groups[name] = AdamMoments{r.values("adam_m_" + name, size), r.values("adam_v_" + name, size)};
    }
    ck.stage = parse_stage(manifest.at("stage").get<std::string>());
    ck.epoch = manifest.at("epoch").get<int>();
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    cam.validate(k, dims);
  } catch (const json::exception& e) {
    fail(ErrorCode::Integrity, std::string("checkpoint manifest is malformed: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Integrity || e.code() == ErrorCode::Io) throw;
    fail(ErrorCode::Integrity, std::string("checkpoint rejected: ") + e.what());
  }
  return ck;
}

}  // namespace atlascrf
