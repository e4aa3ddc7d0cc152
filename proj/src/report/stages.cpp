#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/gap.hpp"
#include "pagkit/hash.hpp"
#include "pagkit/parallel.hpp"
#include "pagkit/report.hpp"
#include "pagkit/volume_io.hpp"

namespace pagkit::report {

namespace {

constexpr std::uint32_t kSliceStoreVersion = 1;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::IoError, "missing input " + path.string());
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

fs::path cohort_path(const RunConfig& cfg) {
  if (!cfg.cohort_csv.empty()) return cfg.cohort_csv;
  return Layout{cfg.out_dir}.synth_dir() / "cohort.csv";
}

fs::path resolve_image(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

std::map<std::string, cohort::PatientRecord> by_id(const std::vector<cohort::PatientRecord>& records) {
  std::map<std::string, cohort::PatientRecord> out;
  for (const auto& r : records) out.emplace(r.patient_id, r);
  return out;
}

void write_binary(const RunConfig& cfg, const fs::path& path) { record_output(cfg, path); }

}  // namespace

json provenance(const RunConfig& cfg) {
  return {{"seed", cfg.seed}, {"config_hash", hex64(cfg.hash())}, {"version", std::string(version())}};
}

void record_output(const RunConfig& cfg, const fs::path& path) {
  const Layout layout{cfg.out_dir};
  json manifest;
  if (fs::exists(layout.provenance())) {
    manifest = json::parse(read_file(layout.provenance()));
  }
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = hex64(cfg.hash());
  manifest["version"] = std::string(version());
  const auto rel = fs::relative(path, cfg.out_dir).generic_string();
  manifest["files"][rel] = {{"fnv1a64", hex64(fnv1a(read_file(path)))}};
  csv::write_text(layout.provenance(), dump(manifest));
}

void write_output(const RunConfig& cfg, const fs::path& path, std::string_view content) {
  csv::write_text(path, content);
  record_output(cfg, path);
}

// Slice store -----------------------------------------------------------------

void write_slice_store(std::span<const imaging::SliceSample> slices, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write("PAGS", 4);
  put(kSliceStoreVersion);
  put(static_cast<std::uint64_t>(slices.size()));
  for (const auto& s : slices) {
    put(static_cast<std::uint32_t>(s.patient_id.size()));
    out.write(s.patient_id.data(), static_cast<std::streamsize>(s.patient_id.size()));
    put(s.slice_index);
    put(s.target_age);
    put(static_cast<std::uint64_t>(s.side));
    out.write(reinterpret_cast<const char*>(s.pixels.data()),
              static_cast<std::streamsize>(s.pixels.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<imaging::SliceSample> read_slice_store(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "missing slice store " + path.string());
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) fail(ErrorCode::TruncatedFile, path.string() + ": truncated slice store");
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PAGS", 4) != 0) fail(ErrorCode::BadMagic, path.string() + " is not a slice store");
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  get(version);
  if (version != kSliceStoreVersion) fail(ErrorCode::BadHeader, path.string() + ": unsupported slice store version");
  get(count);
  std::vector<imaging::SliceSample> out(count);
  for (auto& s : out) {
    std::uint32_t len = 0;
    get(len);
    s.patient_id.resize(len);
    in.read(s.patient_id.data(), len);
    get(s.slice_index);
    get(s.target_age);
    std::uint64_t side = 0;
    get(side);
    s.side = side;
    s.pixels.resize(side * side);
    in.read(reinterpret_cast<char*>(s.pixels.data()), static_cast<std::streamsize>(side * side * sizeof(double)));
    if (!in) fail(ErrorCode::TruncatedFile, path.string() + ": truncated slice store");
  }
  return out;
}

// Split file --------------------------------------------------------------------

void write_split(const SplitFile& split, const json& prov, const fs::path& path) {
  json j;
  j["provenance"] = prov;
  j["seed"] = split.assignment.seed;
  j["train_fraction"] = split.train_fraction;
  j["train_ids"] = split.assignment.train_ids;
  j["test_ids"] = split.assignment.test_ids;
  j["cspc_ids"] = split.cspc_ids;
  j["folds"] = split.assignment.folds;
  csv::write_text(path, dump(j));
}

SplitFile read_split(const fs::path& path) {
  const json j = read_json(path);
  SplitFile s;
  try {
    s.assignment.seed = j.at("seed").get<std::uint64_t>();
    s.train_fraction = j.at("train_fraction").get<double>();
    s.assignment.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.assignment.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    s.cspc_ids = j.at("cspc_ids").get<std::vector<std::string>>();
    s.assignment.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  cohort::validate_split(s.assignment);
  return s;
}

// Stages --------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  if (!cfg.synth) fail(ErrorCode::InvalidConfig, "config has no synth section");
  const Layout layout{cfg.out_dir};
  synth::write_cohort(*cfg.synth, layout.synth_dir(), cfg.threads);
  record_output(cfg, layout.synth_dir() / "cohort.csv");
  record_output(cfg, layout.synth_dir() / "ground_truth.csv");
  write_output(cfg, cfg.out_dir / "config.json", dump(cfg.resolved()));
}

void cmd_preprocess(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  const fs::path csv_path = cohort_path(cfg);
  if (!fs::exists(csv_path)) fail(ErrorCode::IoError, "missing cohort CSV " + csv_path.string());
  const fs::path base = csv_path.parent_path();
  const auto records = cohort::read_cohort_csv(csv_path);
  const auto included = cohort::apply_inclusion_criteria(records, [&](const cohort::PatientRecord& r) {
    return !r.volume_path.empty() && !r.mask_path.empty() && fs::exists(resolve_image(base, r.volume_path)) &&
           fs::exists(resolve_image(base, r.mask_path));
  });

  struct Outcome {
    std::vector<imaging::SliceSample> slices;
    imaging::Box2D box;
    imaging::NormalizeParams params;
    std::string error;
  };
  std::vector<Outcome> outcomes(included.records.size());
  const auto& pp = cfg.preprocess;
  parallel_for(included.records.size(), cfg.threads, [&](std::size_t i) {
    const auto& r = included.records[i];
    auto& o = outcomes[i];
    try {
      const auto volume = imaging::read_volume(resolve_image(base, r.volume_path));
      const auto mask = imaging::read_mask(resolve_image(base, r.mask_path));
      if (volume.dims != mask.dims) fail(ErrorCode::DimensionMismatch, "volume and mask grids differ");
      const auto normalized = imaging::normalize_intensity(volume, pp.normalize, &o.params);
      o.box = imaging::gland_crop_box(normalized, mask, pp.margin);
      o.slices = imaging::extract_slices(imaging::crop(normalized, o.box), imaging::crop(mask, o.box), *r.age,
                                         pp.input_size, pp.slice_rule);
      for (auto& s : o.slices) s.patient_id = r.patient_id;
    } catch (const Error& e) {
      o.error = e.what();
    }
  });

  std::vector<imaging::SliceSample> store;
  json patients = json::array();
  json failed = json::object();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& id = included.records[i].patient_id;
    auto& o = outcomes[i];
    if (!o.error.empty()) {
      failed[id] = o.error;
      continue;
    }
    patients.push_back({{"patient_id", id},
                        {"n_slices", o.slices.size()},
                        {"crop_box",
                         {{"x_min", o.box.x_min}, {"x_max", o.box.x_max}, {"y_min", o.box.y_min}, {"y_max", o.box.y_max}}},
                        {"normalization", {{"lower", o.params.lower}, {"upper", o.params.upper}}}});
    store.insert(store.end(), std::make_move_iterator(o.slices.begin()), std::make_move_iterator(o.slices.end()));
  }
  if (patients.empty()) fail(ErrorCode::NoSlices, "preprocessing produced no usable patient");

  json manifest;
  manifest["provenance"] = provenance(cfg);
  manifest["cohort_csv"] = csv_path.generic_string();
  manifest["input_size"] = pp.input_size;
  manifest["margin"] = pp.margin;
  manifest["n_records"] = records.size();
  manifest["n_included"] = included.records.size();
  manifest["excluded"] = included.excluded;
  manifest["failed"] = failed;
  manifest["patients"] = patients;
  manifest["total_slices"] = store.size();

  write_slice_store(store, layout.slices());
  write_binary(cfg, layout.slices());
  std::vector<cohort::PatientRecord> kept;
  for (const auto& r : included.records) {
    cohort::PatientRecord copy = r;
    copy.volume_path = resolve_image(base, r.volume_path).generic_string();
    copy.mask_path = resolve_image(base, r.mask_path).generic_string();
    kept.push_back(std::move(copy));
  }
  cohort::write_cohort_csv(kept, layout.included_cohort());
  record_output(cfg, layout.included_cohort());
  write_output(cfg, layout.manifest(), dump(manifest));
}

void cmd_split(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  const json manifest = read_json(layout.manifest());
  std::set<std::string> usable;
  for (const auto& p : manifest.at("patients")) usable.insert(p.at("patient_id").get<std::string>());
  const auto records = cohort::read_cohort_csv(layout.included_cohort());
  std::vector<std::string> ncspc;
  std::vector<std::string> cspc;
  for (const auto& r : records) {
    if (!usable.contains(r.patient_id)) continue;
    (cohort::assign_label(r) == cohort::Label::CsPC ? cspc : ncspc).push_back(r.patient_id);
  }
  SplitFile split;
  split.train_fraction = cfg.split.train_fraction;
  split.assignment = cohort::split_train_test(ncspc, cfg.split.train_fraction, cfg.seed);
  split.assignment.folds = cohort::make_cv_folds(split.assignment.train_ids, cfg.split.k_folds, cfg.seed);
  std::sort(cspc.begin(), cspc.end());
  split.cspc_ids = cspc;
  auto& test = split.assignment.test_ids;
  test.insert(test.end(), cspc.begin(), cspc.end());
  std::sort(test.begin(), test.end());
  cohort::validate_split(split.assignment);
  write_split(split, provenance(cfg), layout.split());
  record_output(cfg, layout.split());
}

namespace {

std::map<std::string, std::vector<imaging::SliceSample>> group_slices(std::vector<imaging::SliceSample> store) {
  std::map<std::string, std::vector<imaging::SliceSample>> out;
  for (auto& s : store) out[s.patient_id].push_back(std::move(s));
  return out;
}

}  // namespace

void cmd_train(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  const SplitFile split = read_split(layout.split());
  const auto slices = group_slices(read_slice_store(layout.slices()));
  const auto cv = regressor::train_cv(cfg.model, cfg.train, split.assignment.folds, slices, cfg.threads);
  const std::uint64_t hash = cfg.model.hash();
  json summary;
  summary["provenance"] = provenance(cfg);
  summary["model"] = cfg.model.canonical();
  summary["folds"] = json::array();
  for (const auto& f : cv.folds) {
    regressor::write_weights(f.best_weights, hash, layout.weights(f.fold_index));
    write_binary(cfg, layout.weights(f.fold_index));
    std::size_t n_val = 0;
    for (const auto& id : split.assignment.folds[f.fold_index]) n_val += slices.at(id).size();
    summary["folds"].push_back({{"fold", f.fold_index},
                                {"best_val_mae", f.best_val_mae},
                                {"epoch_of_best", f.epoch_of_best},
                                {"n_val_patients", split.assignment.folds[f.fold_index].size()},
                                {"n_val_slices", n_val}});
  }
  double mean_mae = 0.0;
  for (double m : cv.fold_mae) mean_mae += m;
  summary["mean_slice_mae"] = mean_mae / static_cast<double>(cv.fold_mae.size());
  regressor::write_loss_trace(cv.folds, layout.train_dir() / "loss_trace.csv");
  record_output(cfg, layout.train_dir() / "loss_trace.csv");
  write_output(cfg, layout.train_dir() / "cv_summary.json", dump(summary));
}

void cmd_predict(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  const SplitFile split = read_split(layout.split());
  const auto slices = group_slices(read_slice_store(layout.slices()));
  const auto records = by_id(cohort::read_cohort_csv(layout.included_cohort()));
  const regressor::Network net(cfg.model);
  std::vector<regressor::Weights> models;
  for (std::size_t k = 0; k < split.assignment.folds.size(); ++k) {
    const auto path = layout.weights(k);
    if (!fs::exists(path)) fail(ErrorCode::IoError, "missing weights " + path.string());
    models.push_back(regressor::read_weights(net, path));
  }
  auto row_for = [&](const std::string& id, std::span<const regressor::Weights> ensemble) {
    const auto sit = slices.find(id);
    if (sit == slices.end()) fail(ErrorCode::NoSlices, "no slices for patient " + id);
    const auto rit = records.find(id);
    if (rit == records.end()) fail(ErrorCode::ParseError, "patient " + id + " missing from the cohort");
    const auto preds = regressor::predict_slices(net, ensemble, sit->second);
    return gap::make_analysis_row(gap::make_pag_result(id, preds, *rit->second.age), rit->second);
  };

  std::vector<gap::AnalysisRow> test(split.assignment.test_ids.size());
  parallel_for(test.size(), cfg.threads, [&](std::size_t i) { test[i] = row_for(split.assignment.test_ids[i], models); });

  // training patients get the model of the fold that held them out
  std::vector<std::pair<std::string, std::size_t>> train_ids;
  for (std::size_t k = 0; k < split.assignment.folds.size(); ++k) {
    for (const auto& id : split.assignment.folds[k]) train_ids.emplace_back(id, k);
  }
  std::sort(train_ids.begin(), train_ids.end());
  std::vector<gap::AnalysisRow> train(train_ids.size());
  parallel_for(train.size(), cfg.threads, [&](std::size_t i) {
    train[i] = row_for(train_ids[i].first, std::span<const regressor::Weights>(&models[train_ids[i].second], 1));
  });

  gap::write_pag_csv(test, layout.pag_test());
  record_output(cfg, layout.pag_test());
  gap::write_pag_csv(train, layout.pag_train());
  record_output(cfg, layout.pag_train());
}

void cmd_run_all(const RunConfig& cfg) {
  if (cfg.synth) cmd_synth(cfg);
  cmd_preprocess(cfg);
  cmd_split(cfg);
  cmd_train(cfg);
  cmd_predict(cfg);
  cmd_analyze(cfg);
  cmd_plot(cfg);
}

}  // namespace pagkit::report
