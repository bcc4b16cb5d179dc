#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascrf/volume.hpp"

namespace atlascrf {

/// Physical size of one voxel along (d, h, w).
struct Spacing {
  double d = 1.0;
  double h = 1.0;
  double w = 1.0;
};

/// 2|P n G| / (|P| + |G|) for class k; 1 when both sets are empty.
double dsc(const LabelMap& pred, const LabelMap& gt, Label k);

/// Voxels of class k with at least one 6-neighbour outside the class. The
/// region beyond the volume border counts as outside.
std::vector<std::size_t> surface_voxels(const LabelMap& labels, Label k);

/// Exact Euclidean distance from every voxel to the nearest voxel with
/// mask[i] != 0 (separable lower-envelope transform). Returns +inf
/// everywhere when the mask is empty.
std::vector<double> distance_to_set(std::span<const unsigned char> mask, const Dims& dims, const Spacing& spacing = {});

struct SurfaceDistances {
  double msd = 0.0;   // mean of the two directed mean surface distances
  double hd95 = 0.0;  // 95th percentile of the pooled directed distances
  double max = 0.0;   // largest pooled distance
  bool sentinel = false;  // class missing from one map; values are the volume diagonal
};

/// Linear-interpolation percentile (p in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double p);

/// Throws InvalidArgument when class k is absent from both maps.
SurfaceDistances surface_distances(const LabelMap& pred, const LabelMap& gt, Label k, const Spacing& spacing = {});

/// Mean DSC drop over classes whose ground-truth region intersects the mask.
/// dsc_clean / dsc_path are indexed like `classes`.
double ldd(std::span<const double> dsc_clean, std::span<const double> dsc_path, std::span<const Label> classes,
           const LabelMap& mask, const LabelMap& gt);

struct ClassMetrics {
  Label cls = 0;
  double dsc = 0.0;
  bool has_distances = false;  // false when the class is absent from both maps
  SurfaceDistances distances;
};

struct EvalOptions {
  /// Classes to report; empty means every foreground class 1..K-1, with K
  /// one past the largest label in either map.
  std::vector<Label> classes;
  Spacing spacing;
  bool distances = true;
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double mean_dsc = 0.0;
  double std_dsc = 0.0;
  double mean_msd = 0.0;
  double std_msd = 0.0;
  double mean_hd95 = 0.0;
  double std_hd95 = 0.0;
  std::optional<double> ldd;
  std::optional<double> delta_dsc;

  std::vector<Label> classes() const;
  std::vector<double> class_dsc() const;
};

EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, const EvalOptions& options = {});

/// Mean DSC over classes 1..classes-1.
double mean_foreground_dsc(const LabelMap& pred, const LabelMap& gt, std::size_t classes);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Per-class difference report - baseline (DSC and distances), with
/// delta_dsc = mean_dsc - baseline.mean_dsc.
EvalReport delta_report(const EvalReport& report, const EvalReport& baseline);

/// Aligned-column text table.
std::string format_table(const EvalReport& report);

}  // namespace atlascrf
