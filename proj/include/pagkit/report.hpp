#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pagkit/cohort.hpp"
#include "pagkit/imaging.hpp"
#include "pagkit/regressor.hpp"
#include "pagkit/stats/logistic.hpp"
#include "pagkit/stats/roc.hpp"
#include "pagkit/synth.hpp"

namespace pagkit::report {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view version() noexcept;

struct PreprocessOptions {
  imaging::NormalizeMethod normalize;
  std::int64_t margin = 40;
  std::size_t input_size = 128;
  imaging::SliceRule slice_rule = imaging::SliceRule::NonzeroMask;
};

struct SplitOptions {
  double train_fraction = 0.6;
  std::size_t k_folds = 5;
};

struct AnalysisOptions {
  std::vector<stats::ModelId> models{stats::ModelId::I,  stats::ModelId::II, stats::ModelId::III,
                                     stats::ModelId::IV, stats::ModelId::V,  stats::ModelId::VI};
  stats::BootstrapOptions bootstrap;
  std::vector<double> fpr_points{0.05, 0.10, 0.30, 0.60};
  cohort::ContinuousTest table_test = cohort::ContinuousTest::Welch;
  std::size_t n_perm = 9999;
};

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path out_dir = "pag_run";
  std::size_t threads = 1;
  std::optional<synth::SynthConfig> synth;  // present when the run generates its own cohort
  fs::path cohort_csv;                      // defaults to <out>/synth/cohort.csv
  PreprocessOptions preprocess;
  SplitOptions split;
  regressor::ModelConfig model;
  regressor::TrainConfig train;
  AnalysisOptions analysis;

  /// Fully resolved settings; out_dir and threads are left out because
  /// they do not change any numeric output.
  json resolved() const;
  std::uint64_t hash() const;
};

/// Parses a JSON config; unknown keys are a config error. The overrides
/// replace the corresponding fields after parsing.
RunConfig parse_config(const json& doc, std::optional<std::uint64_t> seed_override = std::nullopt,
                       std::optional<fs::path> out_override = std::nullopt);
RunConfig load_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed_override = std::nullopt,
                      std::optional<fs::path> out_override = std::nullopt);

/// Stage output locations under out_dir.
struct Layout {
  fs::path root;
  fs::path synth_dir() const { return root / "synth"; }
  fs::path slices() const { return root / "preprocess" / "slices.bin"; }
  fs::path manifest() const { return root / "preprocess" / "manifest.json"; }
  fs::path included_cohort() const { return root / "preprocess" / "cohort_included.csv"; }
  fs::path split() const { return root / "split" / "split.json"; }
  fs::path train_dir() const { return root / "train"; }
  fs::path weights(std::size_t fold) const { return train_dir() / ("fold_" + std::to_string(fold) + ".pagw"); }
  fs::path pag_test() const { return root / "predict" / "pag_test.csv"; }
  fs::path pag_train() const { return root / "predict" / "pag_train.csv"; }
  fs::path analysis_dir() const { return root / "analysis"; }
  fs::path bundle() const { return analysis_dir() / "bundle.json"; }
  fs::path plots_dir() const { return root / "plots"; }
  fs::path provenance() const { return root / "provenance.json"; }
};

// Slice store ------------------------------------------------------------------

/// "PAGS", u32 version, u64 count, then per slice: u32 id length, id bytes,
/// i32 slice index, f64 target age, u64 side, side^2 f64 pixels.
void write_slice_store(std::span<const imaging::SliceSample> slices, const fs::path& path);
std::vector<imaging::SliceSample> read_slice_store(const fs::path& path);

// Split file -------------------------------------------------------------------

struct SplitFile {
  cohort::SplitAssignment assignment;  // test_ids hold ncsPC and csPC test patients
  std::vector<std::string> cspc_ids;
  double train_fraction = 0.6;
};
void write_split(const SplitFile& split, const json& provenance, const fs::path& path);
SplitFile read_split(const fs::path& path);

// Stages -----------------------------------------------------------------------

json provenance(const RunConfig& cfg);

void cmd_synth(const RunConfig& cfg);
void cmd_preprocess(const RunConfig& cfg);
void cmd_split(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_predict(const RunConfig& cfg);
/// Returns the bundle; throws Statistical errors when no model could be fit.
json cmd_analyze(const RunConfig& cfg);
void cmd_plot(const RunConfig& cfg);
void cmd_run_all(const RunConfig& cfg);

// Analysis on in-memory data -----------------------------------------------------

/// Everything cmd_analyze derives from the test-set PAG table. Records (for
/// the baseline tables) are optional; the rest needs only the rows.
json analyze_rows(std::span<const gap::AnalysisRow> test_rows, const AnalysisOptions& options, std::uint64_t seed);

/// Subgroup used for the low-suspicion display: csPC with PI-RADS <= 2.
bool is_low_pirads_cspc(const gap::AnalysisRow& row);

// SVG ----------------------------------------------------------------------------

struct SvgMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version;
};

struct NamedCurve {
  std::string name;
  std::vector<stats::RocPoint> points;
  double auc = 0.0;
};

std::string svg_roc(std::span<const NamedCurve> curves, const SvgMeta& meta);
/// Overlaid histograms of two or more groups on shared bins.
std::string svg_histograms(const std::string& title, const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                           const SvgMeta& meta);
struct ConfusionCell {
  std::string model;
  stats::ConfusionMatrix cm;
};
std::string svg_confusion_grid(std::span<const ConfusionCell> cells, const SvgMeta& meta);

/// Writes a file and records it, with a content hash, in provenance.json.
void write_output(const RunConfig& cfg, const fs::path& path, std::string_view content);
void record_output(const RunConfig& cfg, const fs::path& path);

}  // namespace pagkit::report
