#include "atlascrf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "atlascrf/error.hpp"

namespace atlascrf {
namespace {

constexpr double kFar = 1e30;

/// One pass of the 1-D squared distance transform along a line of `n`
/// samples `step` apart in memory, `h` apart in space.
void edt_line(double* f, std::size_t n, std::size_t stride, double h, std::vector<double>& buf,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  buf.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  auto pos = [h](std::size_t q) { return static_cast<double>(q) * h; };
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const std::size_t p = v[k];
      s = ((buf[q] + pos(q) * pos(q)) - (buf[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 here: the new parabola dominates the whole envelope.
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < pos(q)) ++k;
    const double d = pos(q) - pos(v[k]);
    f[q * stride] = d * d + buf[v[k]];
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

void summarize(EvalReport& r) {
  std::vector<double> d, msd, hd;
  for (const auto& c : r.per_class) {
    d.push_back(c.dsc);
    if (c.has_distances) {
      msd.push_back(c.distances.msd);
      hd.push_back(c.distances.hd95);
    }
  }
  r.mean_dsc = mean_of(d);
  r.std_dsc = std_of(d);
  r.mean_msd = mean_of(msd);
  r.std_msd = std_of(msd);
  r.mean_hd95 = mean_of(hd);
  r.std_hd95 = std_of(hd);
}

}  // namespace

double dsc(const LabelMap& pred, const LabelMap& gt, Label k) {
  require_same_dims(pred.dims(), gt.dims(), "dsc pred vs gt");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_p = pred[i] == k;
    const bool in_g = gt[i] == k;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::size_t> surface_voxels(const LabelMap& labels, Label k) {
  const Dims dims = labels.dims();
  std::vector<std::size_t> out;
  static constexpr int kNeighbours[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (std::size_t z = 0; z < dims.d; ++z) {
    for (std::size_t y = 0; y < dims.h; ++y) {
      for (std::size_t x = 0; x < dims.w; ++x) {
        if (labels.at(z, y, x) != k) continue;
        bool boundary = false;
        for (const auto& n : kNeighbours) {
          const long nz = static_cast<long>(z) + n[0];
          const long ny = static_cast<long>(y) + n[1];
          const long nx = static_cast<long>(x) + n[2];
          if (!dims.contains(nz, ny, nx) || labels.at(static_cast<std::size_t>(nz), static_cast<std::size_t>(ny),
                                                      static_cast<std::size_t>(nx)) != k) {
            boundary = true;
            break;
          }
        }
        if (boundary) out.push_back(dims.index(z, y, x));
      }
    }
  }
  return out;
}

std::vector<double> distance_to_set(std::span<const unsigned char> mask, const Dims& dims, const Spacing& spacing) {
  const std::size_t n = dims.voxels();
  if (mask.size() != n) fail(ErrorCode::ShapeMismatch, "distance_to_set: mask size mismatch");
  const bool any = std::any_of(mask.begin(), mask.end(), [](unsigned char c) { return c != 0; });
  if (!any) return std::vector<double>(n, std::numeric_limits<double>::infinity());

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = mask[i] ? 0.0 : kFar;
  std::vector<double> buf, z;
  std::vector<std::size_t> v;
  // w lines
  for (std::size_t zz = 0; zz < dims.d; ++zz)
    for (std::size_t y = 0; y < dims.h; ++y) edt_line(f.data() + dims.index(zz, y, 0), dims.w, 1, spacing.w, buf, v, z);
  // h lines
  for (std::size_t zz = 0; zz < dims.d; ++zz)
    for (std::size_t x = 0; x < dims.w; ++x)
      edt_line(f.data() + dims.index(zz, 0, x), dims.h, dims.w, spacing.h, buf, v, z);
  // d lines
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x)
      edt_line(f.data() + dims.index(0, y, x), dims.d, dims.h * dims.w, spacing.d, buf, v, z);
  for (double& x : f) x = std::sqrt(x);
  return f;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const LabelMap& pred, const LabelMap& gt, Label k, const Spacing& spacing) {
  require_same_dims(pred.dims(), gt.dims(), "surface_distances pred vs gt");
  const Dims dims = pred.dims();
  const auto sp = surface_voxels(pred, k);
  const auto sg = surface_voxels(gt, k);
  if (sp.empty() && sg.empty()) {
    fail(ErrorCode::InvalidArgument, "class " + std::to_string(k) + " is absent from both maps; use DSC only");
  }
  SurfaceDistances out;
  if (sp.empty() || sg.empty()) {
    const double diag = std::sqrt(std::pow(static_cast<double>(dims.d) * spacing.d, 2) +
                                  std::pow(static_cast<double>(dims.h) * spacing.h, 2) +
                                  std::pow(static_cast<double>(dims.w) * spacing.w, 2));
    out.msd = out.hd95 = out.max = diag;
    out.sentinel = true;
    return out;
  }
  auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
    std::vector<unsigned char> mask(dims.voxels(), 0);
    for (std::size_t i : to) mask[i] = 1;
    const std::vector<double> dist = distance_to_set(mask, dims, spacing);
    std::vector<double> d;
    d.reserve(from.size());
    for (std::size_t i : from) d.push_back(dist[i]);
    return d;
  };
  const std::vector<double> pg = directed(sp, sg);
  const std::vector<double> gp = directed(sg, sp);
  out.msd = 0.5 * (mean_of(pg) + mean_of(gp));
  std::vector<double> pooled = pg;
  pooled.insert(pooled.end(), gp.begin(), gp.end());
  out.max = *std::max_element(pooled.begin(), pooled.end());
  out.hd95 = percentile(std::move(pooled), 95.0);
  return out;
}

double ldd(std::span<const double> dsc_clean, std::span<const double> dsc_path, std::span<const Label> classes,
           const LabelMap& mask, const LabelMap& gt) {
  require_same_dims(mask.dims(), gt.dims(), "ldd mask vs gt");
  if (dsc_clean.size() != classes.size() || dsc_path.size() != classes.size()) {
    fail(ErrorCode::ShapeMismatch, "ldd: per-class DSC lists must match the class list");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    bool hit = false;
    for (std::size_t i = 0; i < gt.size() && !hit; ++i) hit = mask[i] != 0 && gt[i] == classes[c];
    if (!hit) continue;
    sum += dsc_clean[c] - dsc_path[c];
    ++count;
  }
  if (count == 0) fail(ErrorCode::InvalidArgument, "ldd undefined: no class has voxels inside the mask");
  return sum / static_cast<double>(count);
}

std::vector<Label> EvalReport::classes() const {
  std::vector<Label> out;
  for (const auto& c : per_class) out.push_back(c.cls);
  return out;
}

std::vector<double> EvalReport::class_dsc() const {
  std::vector<double> out;
  for (const auto& c : per_class) out.push_back(c.dsc);
  return out;
}

EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, const EvalOptions& options) {
  require_same_dims(pred.dims(), gt.dims(), "evaluate pred vs gt");
  std::vector<Label> classes = options.classes;
  if (classes.empty()) {
    Label top = 0;
    for (Label l : pred.data()) top = std::max(top, l);
    for (Label l : gt.data()) top = std::max(top, l);
    for (Label l = 1; l <= top; ++l) classes.push_back(l);
  }
  EvalReport r;
  for (Label k : classes) {
    ClassMetrics m;
    m.cls = k;
    m.dsc = dsc(pred, gt, k);
    if (options.distances) {
      const bool present = std::find(pred.data().begin(), pred.data().end(), k) != pred.data().end() ||
                           std::find(gt.data().begin(), gt.data().end(), k) != gt.data().end();
      if (present) {
        m.distances = surface_distances(pred, gt, k, options.spacing);
        m.has_distances = true;
      }
    }
    r.per_class.push_back(m);
  }
  summarize(r);
  return r;
}

double mean_foreground_dsc(const LabelMap& pred, const LabelMap& gt, std::size_t classes) {
  if (classes < 2) fail(ErrorCode::InvalidArgument, "mean_foreground_dsc needs K >= 2");
  double sum = 0.0;
  for (std::size_t k = 1; k < classes; ++k) sum += dsc(pred, gt, static_cast<Label>(k));
  return sum / static_cast<double>(classes - 1);
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    nlohmann::json e{{"class", c.cls}, {"dsc", c.dsc}};
    if (c.has_distances) {
      e["msd"] = c.distances.msd;
      e["hd95"] = c.distances.hd95;
      e["max_distance"] = c.distances.max;
      e["distance_sentinel"] = c.distances.sentinel;
    } else {
      e["msd"] = nullptr;
      e["hd95"] = nullptr;
    }
    classes.push_back(e);
  }
  j["classes"] = classes;
  j["mean_dsc"] = report.mean_dsc;
  j["std_dsc"] = report.std_dsc;
  j["mean_msd"] = report.mean_msd;
  j["std_msd"] = report.std_msd;
  j["mean_hd95"] = report.mean_hd95;
  j["std_hd95"] = report.std_hd95;
  if (report.ldd) j["ldd"] = *report.ldd;
  if (report.delta_dsc) j["delta_dsc"] = *report.delta_dsc;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    for (const auto& e : j.at("classes")) {
      ClassMetrics m;
      m.cls = e.at("class").get<Label>();
      m.dsc = e.at("dsc").get<double>();
      if (e.contains("msd") && !e.at("msd").is_null()) {
        m.has_distances = true;
        m.distances.msd = e.at("msd").get<double>();
        m.distances.hd95 = e.at("hd95").get<double>();
        m.distances.max = e.value("max_distance", m.distances.hd95);
        m.distances.sentinel = e.value("distance_sentinel", false);
      }
      r.per_class.push_back(m);
    }
    r.mean_dsc = j.at("mean_dsc").get<double>();
    r.std_dsc = j.at("std_dsc").get<double>();
    r.mean_msd = j.at("mean_msd").get<double>();
    r.std_msd = j.at("std_msd").get<double>();
    r.mean_hd95 = j.at("mean_hd95").get<double>();
    r.std_hd95 = j.at("std_hd95").get<double>();
    if (j.contains("ldd")) r.ldd = j.at("ldd").get<double>();
    if (j.contains("delta_dsc")) r.delta_dsc = j.at("delta_dsc").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadHeader, std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

EvalReport delta_report(const EvalReport& report, const EvalReport& baseline) {
  if (report.classes() != baseline.classes()) {
    fail(ErrorCode::ShapeMismatch, "delta: reports cover different class lists");
  }
  EvalReport d;
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& a = report.per_class[c];
    const auto& b = baseline.per_class[c];
    ClassMetrics m;
    m.cls = a.cls;
    m.dsc = a.dsc - b.dsc;
    m.has_distances = a.has_distances && b.has_distances;
    if (m.has_distances) {
      m.distances.msd = a.distances.msd - b.distances.msd;
      m.distances.hd95 = a.distances.hd95 - b.distances.hd95;
      m.distances.max = a.distances.max - b.distances.max;
      m.distances.sentinel = a.distances.sentinel || b.distances.sentinel;
    }
    d.per_class.push_back(m);
  }
  d.mean_dsc = report.mean_dsc - baseline.mean_dsc;
  d.std_dsc = report.std_dsc - baseline.std_dsc;
  d.mean_msd = report.mean_msd - baseline.mean_msd;
  d.std_msd = report.std_msd - baseline.std_msd;
  d.mean_hd95 = report.mean_hd95 - baseline.mean_hd95;
  d.std_hd95 = report.std_hd95 - baseline.std_hd95;
  if (report.ldd && baseline.ldd) d.ldd = *report.ldd - *baseline.ldd;
  d.delta_dsc = d.mean_dsc;
  return d;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %10s %10s %10s\n", "class", "DSC", "MSD", "HD95");
  out << line;
  for (const auto& c : report.per_class) {
    if (c.has_distances) {
      std::snprintf(line, sizeof line, "%-8u %10.4f %10.4f %10.4f%s\n", static_cast<unsigned>(c.cls), c.dsc,
                    c.distances.msd, c.distances.hd95, c.distances.sentinel ? "  (sentinel)" : "");
    } else {
      std::snprintf(line, sizeof line, "%-8u %10.4f %10s %10s\n", static_cast<unsigned>(c.cls), c.dsc, "-", "-");
    }
    out << line;
  }
  std::snprintf(line, sizeof line, "%-8s %10.4f %10.4f %10.4f\n", "mean", report.mean_dsc, report.mean_msd,
                report.mean_hd95);
  out << line;
  std::snprintf(line, sizeof line, "%-8s %10.4f %10.4f %10.4f\n", "std", report.std_dsc, report.std_msd,
                report.std_hd95);
  out << line;
  if (report.ldd) {
    std::snprintf(line, sizeof line, "%-8s %10.4f\n", "LDD", *report.ldd);
    out << line;
  }
  if (report.delta_dsc) {
    std::snprintf(line, sizeof line, "%-8s %10.4f\n", "dDSC", *report.delta_dsc);
    out << line;
  }
  return out.str();
}

}  // namespace atlascrf
