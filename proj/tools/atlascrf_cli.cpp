#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "atlascrf/atlas.hpp"
#include "atlascrf/checkpoint.hpp"
#include "atlascrf/error.hpp"
#include "atlascrf/gradcheck.hpp"
#include "atlascrf/metrics.hpp"
#include "atlascrf/parallel.hpp"
#include "atlascrf/perturb.hpp"
#include "atlascrf/toy.hpp"
#include "atlascrf/train.hpp"
#include "atlascrf/vol1.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace atlascrf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A failed numeric check that is a result rather than an exception.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return kExitUsage;
    case ErrorCode::NonFinite:
    case ErrorCode::Numeric:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

int report_error(const std::string& command, const std::string& code, const std::string& message, int exit) {
  std::cerr << json{{"command", command}, {"error", code}, {"exit", exit}, {"message", message}}.dump() << "\n";
  return exit;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string case_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03zu", i);
  return buf;
}

// Fills options not given on the command line from a JSON object whose keys
// are long option names (dashes or underscores).
void apply_config(CLI::App& app, CLI::App& sub, const fs::path& path) {
  const auto raw = read_file_bytes(path);
  json j;
  try {
    j = json::parse(reinterpret_cast<const char*>(raw.data()), reinterpret_cast<const char*>(raw.data()) + raw.size());
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (char& c : name)
      if (c == '_') c = '-';
    if (name == "config") throw UsageError("config files cannot nest");
    CLI::Option* opt = sub.get_option_no_throw("--" + name);
    if (!opt) opt = app.get_option_no_throw("--" + name);
    if (!opt) throw UsageError("unknown config key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    std::vector<std::string> results;
    auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      for (const auto& v : value) results.push_back(text(v));
    } else {
      results.push_back(text(value));
    }
    try {
      opt->add_result(results);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

// Checked after the config file is applied, so config keys can satisfy them.
std::vector<std::pair<const CLI::App*, const CLI::Option*>> required_options;

void require(const CLI::App* sub, const CLI::Option* opt) { required_options.emplace_back(sub, opt); }

void check_required(const CLI::App& sub) {
  for (const auto& [owner, opt] : required_options)
    if (owner == &sub && opt->count() == 0) throw UsageError(opt->get_name() + " is required");
}

struct Common {
  int threads = 0;
  bool deterministic = false;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string config;
};

std::vector<Sample> standardized(std::vector<Sample> samples, bool on) {
  if (on)
    for (Sample& s : samples) s.scan = intensity_standardize(s.scan);
  return samples;
}

ScalarVolume maybe_standardize(const ScalarVolume& v, bool on) { return on ? intensity_standardize(v) : v; }

// ---------------------------------------------------------------- toygen

struct ToygenArgs {
  std::string out;
  ToyConfig cfg;
};

void add_toygen(CLI::App& app, ToygenArgs& a) {
  auto* c = app.add_subcommand("toygen", "Write the synthetic nested-ellipsoid dataset");
  require(c, c->add_option("--out", a.out, "Output directory"));
  c->add_option("--edge", a.cfg.edge, "Cube edge in voxels")->capture_default_str();
  c->add_option("--train", a.cfg.train, "Training subjects")->capture_default_str();
  c->add_option("--val", a.cfg.val, "Validation subjects")->capture_default_str();
  c->add_option("--test", a.cfg.test, "Test subjects")->capture_default_str();
  c->add_option("--noise-sigma", a.cfg.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  c->add_option("--max-shift", a.cfg.max_shift, "Per-axis placement jitter (voxels)")->capture_default_str();
  c->add_option("--background", a.cfg.background, "Background mean intensity")->capture_default_str();
  c->add_option("--outer", a.cfg.outer, "Outer shell mean intensity")->capture_default_str();
  c->add_option("--inner", a.cfg.inner, "Inner core mean intensity")->capture_default_str();
}

int run_toygen(ToygenArgs& a, const Common& common) {
  if (common.seed_opt->count() > 0) a.cfg.seed = common.seed;
  const ToyDataset data = make_toy_dataset(a.cfg);
  write_toy_dataset(a.out, data, a.cfg);
  std::cout << "toygen: " << data.train.size() << " train, " << data.val.size() << " val, " << data.test.size()
            << " test subjects in " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ atlas-build

struct AtlasArgs {
  std::string dataset;
  std::vector<std::string> scans, labels;
  std::size_t classes = 0;
  std::string out;
  bool no_standardize = false;
};

void add_atlas(CLI::App& app, AtlasArgs& a) {
  auto* c = app.add_subcommand("atlas-build", "Average co-registered training pairs into an atlas");
  c->add_option("--dataset", a.dataset, "dataset.json; its train split is used");
  c->add_option("--scan", a.scans, "Scan VOL1 (repeat, paired with --labels)");
  c->add_option("--labels", a.labels, "Label VOL1 (repeat)");
  c->add_option("--classes", a.classes, "Class count K (default: from the dataset or labels)");
  require(c, c->add_option("--out", a.out, "Output stem (writes <stem>_scan.vol1, <stem>_labels.vol1, <stem>.json)"));
  c->add_flag("--no-standardize", a.no_standardize, "Average raw intensities");
}

int run_atlas(const AtlasArgs& a) {
  AtlasBuildInput in;
  std::string provenance;
  if (!a.dataset.empty()) {
    const SplitManifest m = read_split_manifest(a.dataset);
    in.classes = m.classes;
    for (Sample& s : standardized(load_samples(m.train), !a.no_standardize)) {
      in.scans.push_back(std::move(s.scan));
      in.labels.push_back(std::move(s.labels));
    }
    provenance = "train split of " + fs::path(a.dataset).filename().string();
  } else {
    if (a.scans.empty() || a.scans.size() != a.labels.size())
      throw UsageError("atlas-build needs --dataset or matching --scan/--labels pairs");
    for (std::size_t i = 0; i < a.scans.size(); ++i) {
      in.scans.push_back(maybe_standardize(read_scalar_vol1(a.scans[i]), !a.no_standardize));
      in.labels.push_back(read_label_vol1(a.labels[i]));
      in.classes = std::max<std::size_t>(in.classes, 1 + *std::max_element(in.labels.back().data().begin(),
                                                                           in.labels.back().data().end()));
    }
    provenance = std::to_string(a.scans.size()) + " explicit pairs";
  }
  if (a.classes > 0) in.classes = a.classes;
  provenance += a.no_standardize ? ", raw intensities" : ", standardized intensities";
  const AtlasPair atlas = build_atlas(in);
  save_atlas(a.out, atlas, provenance);
  std::cout << "atlas-build: " << in.scans.size() << " pairs, K=" << in.classes << " -> " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string dataset, atlas, init, out, history;
  std::string stage = "unary_only";
  bool from_scratch = false;
  bool no_standardize = false;
  TrainConfig cfg;
  int iters = 0;
  int prior_size = 0, prior_dilation = 0, smooth_size = 0, smooth_dilation = 0;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train the unary net and/or the CRF parameters");
  require(c, c->add_option("--dataset", a.dataset, "dataset.json (train and val splits)"));
  c->add_option("--atlas", a.atlas, "Atlas stem; built from the train split when omitted");
  c->add_option("--stage", a.stage, "unary_only | joint | separate")->capture_default_str();
  c->add_option("--init", a.init, "Checkpoint to start from (stage-1 result)");
  c->add_flag("--from-scratch", a.from_scratch, "Allow joint/separate training without --init");
  require(c, c->add_option("--out", a.out, "Checkpoint directory"));
  c->add_option("--history", a.history, "Per-epoch CSV (default <out>/history.csv)");
  c->add_option("--epochs", a.cfg.max_epochs)->capture_default_str();
  c->add_option("--patience", a.cfg.patience)->capture_default_str();
  c->add_option("--lr", a.cfg.lr_default, "Learning rate for every group but omega_p")->capture_default_str();
  c->add_option("--lr-omega-p", a.cfg.lr_omega_p)->capture_default_str();
  c->add_option("--noise", a.cfg.noise_fraction, "Augmentation sigma as a fraction of intensity range")
      ->capture_default_str();
  c->add_option("--patch", a.cfg.patch_edge, "Random crop edge; 0 trains on whole volumes")->capture_default_str();
  c->add_option("--batch", a.cfg.batch_size)->capture_default_str();
  c->add_option("--iters", a.iters, "Mean-field iterations");
  c->add_option("--prior-size", a.prior_size, "Prior neighbourhood S");
  c->add_option("--prior-dilation", a.prior_dilation, "Prior dilation r");
  c->add_option("--smooth-size", a.smooth_size, "Smoothness neighbourhood S");
  c->add_option("--smooth-dilation", a.smooth_dilation, "Smoothness dilation r");
  c->add_flag("--no-standardize", a.no_standardize);
}

void override_structure(CamParams& cam, int iters, int ps, int pr, int ss, int sr) {
  if (iters > 0) cam.iters = iters;
  if (ps > 0) cam.conn_prior.size = ps;
  if (pr > 0) cam.conn_prior.dilation = pr;
  if (ss > 0) cam.conn_smooth.size = ss;
  if (sr > 0) cam.conn_smooth.dilation = sr;
}

int run_train(TrainArgs& a, const Common& common) {
  a.cfg.seed = common.seed;
  try {
    a.cfg.stage = parse_stage(a.stage);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.cfg.stage != TrainStage::UnaryOnly && a.init.empty() && !a.from_scratch)
    throw UsageError("stage " + std::string(to_string(a.cfg.stage)) +
                     " needs a stage-1 checkpoint via --init (or --from-scratch)");

  const SplitManifest m = read_split_manifest(a.dataset);
  Dataset data;
  data.classes = m.classes;
  data.train = standardized(load_samples(m.train), !a.no_standardize);
  data.val = standardized(load_samples(m.val), !a.no_standardize);
  if (data.train.empty()) fail(ErrorCode::ShapeMismatch, "dataset has no training subjects");
  if (!a.atlas.empty()) {
    data.atlas = load_atlas(a.atlas);
  } else {
    AtlasBuildInput in{{}, {}, data.classes};
    for (const Sample& s : data.train) {
      in.scans.push_back(s.scan);
      in.labels.push_back(s.labels);
    }
    data.atlas = build_atlas(in);
  }
  const Dims dims = data.train.front().scan.dims();

  Model init;
  if (!a.init.empty()) {
    const Checkpoint ck = load_checkpoint(a.init);
    init = ck.model;
    if (init.cam.classes() != data.classes || init.cam.prior.omega.dims() != dims)
      fail(ErrorCode::ShapeMismatch, "checkpoint " + a.init + " does not match the dataset's K or grid");
  } else {
    init = initial_model(data.classes, dims, common.seed);
  }
  override_structure(init.cam, a.iters, a.prior_size, a.prior_dilation, a.smooth_size, a.smooth_dilation);

  const fs::path history = a.history.empty() ? fs::path(a.out) / "history.csv" : fs::path(a.history);
  std::string csv = "epoch,train_loss,val_dice\n";
  const TrainResult r = train(data, init, a.cfg, [&](const EpochRecord& e) {
    const std::string line = std::to_string(e.epoch) + "," + fmt("%.10g", e.train_loss) + "," +
                             fmt("%.10g", e.val_dice) + "\n";
    csv += line;
    std::cout << "epoch " << e.epoch << " loss " << fmt("%.6f", e.train_loss) << " val_dice "
              << fmt("%.4f", e.val_dice) << "\n";
  });
  for (const EpochRecord& e : r.history)
    if (!std::isfinite(e.train_loss)) fail(ErrorCode::Numeric, "training loss became non-finite");

  Checkpoint ck{r.model, r.optimizer, a.cfg.stage, r.best_epoch, common.seed};
  save_checkpoint(a.out, ck);
  write_text(history, csv);
  std::cout << "train: best epoch " << r.best_epoch << " val_dice " << fmt("%.4f", r.best_val_dice) << " -> "
            << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string target, atlas, checkpoint, unary, gt, out_labels, out_q, report;
  std::size_t classes = 0;
  bool disable_prior = false, disable_smooth = false, no_standardize = false;
  int align = 0;
  int iters = 0;
};

void add_infer(CLI::App& app, InferArgs& a) {
  auto* c = app.add_subcommand("infer", "Run mean-field inference on one scan");
  require(c, c->add_option("--target", a.target, "Target scan VOL1"));
  require(c, c->add_option("--atlas", a.atlas, "Atlas stem"));
  c->add_option("--checkpoint", a.checkpoint, "Trained checkpoint (net and CRF parameters)");
  c->add_option("--unary", a.unary, "File-backed unary: probabilities or logits VOL1");
  c->add_option("--classes", a.classes, "K for a file-backed unary without checkpoint (default: atlas K)");
  c->add_option("--out-labels", a.out_labels, "Predicted label map VOL1");
  c->add_option("--out-q", a.out_q, "Final Q probability VOL1");
  c->add_option("--gt", a.gt, "Ground-truth labels; adds CAM and unary-only DSC to the report");
  c->add_option("--report", a.report, "Report JSON path (default: stdout)");
  c->add_flag("--disable-prior", a.disable_prior);
  c->add_flag("--disable-smooth", a.disable_smooth);
  c->add_option("--align-translation", a.align, "Search integer atlas shifts up to N voxels")->capture_default_str();
  c->add_option("--iters", a.iters, "Override mean-field iterations");
  c->add_flag("--no-standardize", a.no_standardize);
}

int run_infer(const InferArgs& a) {
  if (a.checkpoint.empty() && a.unary.empty()) throw UsageError("infer needs --checkpoint or --unary");
  if (a.align < 0) throw UsageError("--align-translation must be >= 0");
  const ScalarVolume target = maybe_standardize(read_scalar_vol1(a.target), !a.no_standardize);
  AtlasPair atlas = load_atlas(a.atlas);
  const std::size_t k = atlas.labels.classes();

  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);
  CamParams cam = ck ? stage_params(ck->model.cam, ck->stage) : CamParams::initial(k, target.dims());
  if (cam.classes() != k) fail(ErrorCode::ShapeMismatch, "checkpoint K differs from the atlas K");
  if (a.classes > 0 && a.classes != k) fail(ErrorCode::ShapeMismatch, "--classes differs from the atlas K");
  if (a.iters > 0) cam.iters = a.iters;
  if (a.disable_prior) cam.enable_prior = false;
  if (a.disable_smooth) cam.enable_smooth = false;

  const UnarySource source =
      a.unary.empty() ? UnarySource(TinyNetUnary{ck->model.net}) : UnarySource(FileBackedUnary{a.unary});
  const ProbVolume logits = unary_logits(source, target, k);

  AlignResult aligned{atlas, {0, 0, 0}, 0.0};
  if (a.align > 0) aligned = align_translation(atlas, target, a.align);
  const ProbVolume q = mean_field_infer(CamInput{target, logits, aligned.atlas}, cam);
  const LabelMap labels = argmax_labels(q);
  if (!a.out_labels.empty()) write_vol1(a.out_labels, labels, static_cast<std::uint32_t>(k));
  if (!a.out_q.empty()) write_vol1(a.out_q, q);

  json report{{"classes", k},
              {"enable_prior", cam.enable_prior},
              {"enable_smooth", cam.enable_smooth},
              {"iters", cam.iters},
              {"shift", aligned.shift}};
  if (a.align > 0) report["ncc"] = aligned.ncc;
  if (!a.gt.empty()) {
    const LabelMap gt = read_label_vol1(a.gt);
    const LabelMap unary_only = argmax_labels(softmax_channels(logits));
    const double cam_dsc = mean_foreground_dsc(labels, gt, k);
    const double unary_dsc = mean_foreground_dsc(unary_only, gt, k);
    json per_class = json::array();
    for (std::size_t c = 1; c < k; ++c)
      per_class.push_back({{"class", c},
                           {"cam_dsc", dsc(labels, gt, static_cast<Label>(c))},
                           {"unary_dsc", dsc(unary_only, gt, static_cast<Label>(c))}});
    report["cam_dsc"] = cam_dsc;
    report["unary_dsc"] = unary_dsc;
    report["dsc_gain"] = cam_dsc - unary_dsc;
    report["per_class"] = per_class;
  }
  if (a.report.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    write_text(a.report, report.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------- perturb

struct PerturbArgs {
  std::string dataset, split = "test", out;
  std::vector<std::string> scans, labels;
  std::size_t cases = 20;
  bool anywhere = false;
  LesionSpec spec;
};

void add_perturb(CLI::App& app, PerturbArgs& a) {
  auto* c = app.add_subcommand("perturb", "Synthesize pathological cases from clean scans");
  c->add_option("--dataset", a.dataset, "dataset.json supplying source scans");
  c->add_option("--split", a.split, "train | val | test")->capture_default_str();
  c->add_option("--scan", a.scans, "Source scan VOL1 (repeat)");
  c->add_option("--labels", a.labels, "Ground truth paired with --scan (repeat, optional)");
  c->add_option("--cases", a.cases, "Number of cases; sources are cycled")->capture_default_str();
  require(c, c->add_option("--out", a.out, "Output directory"));
  c->add_option("--count", a.spec.count, "Blobs per case")->capture_default_str();
  c->add_option("--radius-min", a.spec.radius_min)->capture_default_str();
  c->add_option("--radius-max", a.spec.radius_max)->capture_default_str();
  c->add_option("--noise-low", a.spec.noise_low, "Fraction of the scan maximum")->capture_default_str();
  c->add_option("--noise-high", a.spec.noise_high)->capture_default_str();
  c->add_flag("--anywhere", a.anywhere, "Allow lesion centers in background (default: inside labelled foreground)");
}

int run_perturb(const PerturbArgs& a, const Common& common) {
  a.spec.validate();
  std::vector<std::pair<fs::path, fs::path>> sources;
  if (!a.dataset.empty()) {
    const SplitManifest m = read_split_manifest(a.dataset);
    if (a.split == "train") {
      sources = m.train;
    } else if (a.split == "val") {
      sources = m.val;
    } else if (a.split == "test") {
      sources = m.test;
    } else {
      throw UsageError("--split must be train, val or test");
    }
  } else {
    if (!a.labels.empty() && a.labels.size() != a.scans.size())
      throw UsageError("--labels must pair with every --scan");
    for (std::size_t i = 0; i < a.scans.size(); ++i)
      sources.emplace_back(a.scans[i], a.labels.empty() ? fs::path() : fs::path(a.labels[i]));
  }
  if (a.cases == 0) {
    std::cout << "perturb: 0 cases\n";
    return kExitOk;
  }
  if (sources.empty()) throw UsageError("perturb needs source scans (--dataset or --scan)");

  fs::create_directories(a.out);
  json cases = json::array();
  for (std::size_t i = 0; i < a.cases; ++i) {
    const auto& [scan_path, label_path] = sources[i % sources.size()];
    const ScalarVolume scan = read_scalar_vol1(scan_path);
    LesionSpec spec = a.spec;
    spec.seed = splitmix64(common.seed * 0x100000001b3ULL + i);
    std::optional<LabelMap> region;
    if (!label_path.empty() && !a.anywhere) region = read_label_vol1(label_path);
    const LabelMap* within = region ? &*region : nullptr;
    const LabelMap mask = gen_lesion_mask(scan.dims(), spec, within);
    const ScalarVolume hurt = apply_pathology(scan, mask, spec, splitmix64(spec.seed));
    const std::string name = case_name(i);
    write_vol1(fs::path(a.out) / (name + "_scan.vol1"), hurt);
    write_vol1(fs::path(a.out) / (name + "_mask.vol1"), mask, 2);
    json lesions = json::array();
    for (const Ellipsoid& e : sample_lesions(scan.dims(), spec, within))
      lesions.push_back({{"center", e.center}, {"radii", e.radii}});
    json entry{{"scan", name + "_scan.vol1"},
               {"mask", name + "_mask.vol1"},
               {"source", fs::relative(fs::absolute(scan_path), fs::absolute(a.out)).generic_string()},
               {"seed", spec.seed},
               {"within_foreground", within != nullptr},
               {"lesions", lesions}};
    if (!label_path.empty()) entry["labels"] = fs::relative(fs::absolute(label_path), fs::absolute(a.out)).generic_string();
    cases.push_back(entry);
  }
  const json manifest{{"cases", cases},
                      {"spec",
                       {{"count", a.spec.count},
                        {"radius_min", a.spec.radius_min},
                        {"radius_max", a.spec.radius_max},
                        {"noise_low", a.spec.noise_low},
                        {"noise_high", a.spec.noise_high}}},
                      {"seed", common.seed}};
  write_text(fs::path(a.out) / "cases.json", manifest.dump(2) + "\n");
  std::cout << "perturb: " << a.cases << " cases -> " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt, ldd_mask, clean, delta, out;
  std::vector<int> classes;
  std::vector<double> spacing;
  bool no_distances = false;
  bool json_stdout = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Compare a label map against ground truth");
  require(c, c->add_option("--pred", a.pred, "Predicted labels VOL1"));
  require(c, c->add_option("--gt", a.gt, "Ground-truth labels VOL1"));
  c->add_option("--classes", a.classes, "Class subset (default: foreground classes)");
  c->add_option("--spacing", a.spacing, "Voxel spacing d h w")->expected(3);
  c->add_flag("--no-distances", a.no_distances, "DSC only");
  c->add_option("--ldd", a.ldd_mask, "Lesion mask; LDD against --clean");
  c->add_option("--clean", a.clean, "Prediction on the clean scan (for --ldd)");
  c->add_option("--delta", a.delta, "Baseline report JSON; emits the difference");
  c->add_option("--out", a.out, "Report JSON path");
  c->add_flag("--json", a.json_stdout, "Print JSON instead of the table");
}

int run_eval(const EvalArgs& a) {
  const LabelMap pred = read_label_vol1(a.pred), gt = read_label_vol1(a.gt);
  EvalOptions opt;
  for (int c : a.classes) {
    if (c < 0 || c > 65535) throw UsageError("class ids must be in [0, 65535]");
    opt.classes.push_back(static_cast<Label>(c));
  }
  if (!a.spacing.empty()) opt.spacing = Spacing{a.spacing[0], a.spacing[1], a.spacing[2]};
  opt.distances = !a.no_distances;
  EvalReport report = evaluate(pred, gt, opt);
  if (!a.ldd_mask.empty()) {
    if (a.clean.empty()) throw UsageError("--ldd needs --clean");
    const LabelMap clean = read_label_vol1(a.clean);
    EvalOptions dsc_only = opt;
    dsc_only.classes = report.classes();
    dsc_only.distances = false;
    const EvalReport clean_report = evaluate(clean, gt, dsc_only);
    report.ldd = ldd(clean_report.class_dsc(), report.class_dsc(), report.classes(), read_label_vol1(a.ldd_mask), gt);
  } else if (!a.clean.empty()) {
    throw UsageError("--clean is only meaningful with --ldd");
  }
  if (!a.delta.empty()) {
    const auto raw = read_file_bytes(a.delta);
    json base;
    try {
      base = json::parse(reinterpret_cast<const char*>(raw.data()), reinterpret_cast<const char*>(raw.data()) + raw.size());
    } catch (const json::exception& e) {
      fail(ErrorCode::BadHeader, "baseline report " + a.delta + " is not valid JSON");
    }
    report = delta_report(report, report_from_json(base));
  }
  const std::string text = to_json(report).dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << (a.json_stdout ? text : format_table(report));
  return kExitOk;
}

// -------------------------------------------------------------- gradcheck

struct GradArgs {
  std::string checkpoint, out;
  std::vector<std::string> params;
  double h = 1e-3, tolerance = 1e-4;
  std::size_t edge = 4, classes = 3, max_coords = 0;
  int iters = 2;
};

void add_gradcheck(CLI::App& app, GradArgs& a) {
  auto* c = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with finite differences");
  c->add_option("--checkpoint", a.checkpoint, "Check this model on a random instance of its grid");
  c->add_option("--param", a.params, "Restrict to groups: mu mu_prior omega_p omega_s theta_p theta_s net");
  c->add_option("--step", a.h, "Central difference step h")->capture_default_str();
  c->add_option("--tolerance", a.tolerance, "Relative error bound")->capture_default_str();
  c->add_option("--edge", a.edge, "Instance cube edge")->capture_default_str();
  c->add_option("--classes", a.classes)->capture_default_str();
  c->add_option("--iters", a.iters, "Mean-field iterations")->capture_default_str();
  c->add_option("--max-coords", a.max_coords, "Coordinates sampled per group; 0 checks all")->capture_default_str();
  c->add_option("--out", a.out, "Result JSON path");
}

int run_gradcheck(const GradArgs& a, const Common& common) {
  GradcheckInstance inst;
  GradcheckOptions opt;
  opt.h = a.h;
  opt.tolerance = a.tolerance;
  opt.groups = a.params;
  opt.max_coords = a.max_coords;
  opt.seed = common.seed;
  if (!a.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    inst = random_gradcheck_instance(common.seed, ck.model.cam.prior.omega.dims(), ck.model.cam.classes(),
                                     ck.model.cam.iters);
    inst.model = ck.model;
    if (opt.max_coords == 0) opt.max_coords = 16;
  } else {
    inst = random_gradcheck_instance(common.seed, Dims{a.edge, a.edge, a.edge}, a.classes, a.iters);
  }
  for (const std::string& g : opt.groups)
    if (std::find(std::begin(kParamGroups), std::end(kParamGroups), g) == std::end(kParamGroups))
      throw UsageError("unknown parameter group '" + g + "'");
  const auto groups = gradcheck(inst, opt);

  json rows = json::array();
  bool ok = true;
  std::printf("%-10s %12s %12s %8s %8s  %s\n", "group", "rel_error", "grad_norm", "checked", "skipped", "result");
  for (const GradcheckGroup& g : groups) {
    ok = ok && g.pass;
    std::printf("%-10s %12.3e %12.3e %8zu %8zu  %s\n", g.name.c_str(), g.rel_error, g.analytic_norm, g.checked,
                g.skipped, g.pass ? "PASS" : "FAIL");
    rows.push_back({{"group", g.name},
                    {"rel_error", g.rel_error},
                    {"analytic_norm", g.analytic_norm},
                    {"checked", g.checked},
                    {"skipped", g.skipped},
                    {"pass", g.pass}});
  }
  std::fflush(stdout);
  if (!a.out.empty())
    write_text(a.out, json{{"h", opt.h}, {"tolerance", opt.tolerance}, {"groups", rows}, {"pass", ok}}.dump(2) + "\n");
  if (!ok) throw NumericFailure("gradient check failed for at least one parameter group");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Atlas-constrained CRF segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads (default: ATLASCRF_THREADS or all cores)");
  app.add_flag("--deterministic", common.deterministic, "Thread-count-independent reductions");
  common.seed_opt = app.add_option("--seed", common.seed, "Random seed");
  app.add_option("--config", common.config, "JSON config; keys are long option names, flags win");

  ToygenArgs toygen;
  AtlasArgs atlas;
  TrainArgs train_args;
  InferArgs infer;
  PerturbArgs perturb;
  EvalArgs eval;
  GradArgs grad;
  add_toygen(app, toygen);
  add_atlas(app, atlas);
  add_train(app, train_args);
  add_infer(app, infer);
  add_perturb(app, perturb);
  add_eval(app, eval);
  add_gradcheck(app, grad);

  std::string command = "atlascrf";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(command, "Usage", e.what(), kExitUsage);
  }

  CLI::App* sub = app.get_subcommands().front();
  command = sub->get_name();
  try {
    if (!common.config.empty()) apply_config(app, *sub, common.config);
    check_required(*sub);
    if (common.threads < 0) throw UsageError("--threads must be >= 0");
    if (common.threads > 0) set_thread_count(common.threads);
    set_deterministic(common.deterministic);

    if (command == "toygen") return run_toygen(toygen, common);
    if (command == "atlas-build") return run_atlas(atlas);
    if (command == "train") return run_train(train_args, common);
    if (command == "infer") return run_infer(infer);
    if (command == "perturb") return run_perturb(perturb, common);
    if (command == "eval") return run_eval(eval);
    if (command == "gradcheck") return run_gradcheck(grad, common);
    throw UsageError("unknown command " + command);
  } catch (const UsageError& e) {
    return report_error(command, "Usage", e.what(), kExitUsage);
  } catch (const NumericFailure& e) {
    return report_error(command, "Numeric", e.what(), kExitNumeric);
  } catch (const Error& e) {
    return report_error(command, std::string(to_string(e.code())), e.what(), exit_code(e.code()));
  } catch (const fs::filesystem_error& e) {
    return report_error(command, "Io", e.what(), kExitData);
  } catch (const std::exception& e) {
    return report_error(command, "Internal", e.what(), 1);
  }
}
