#include <fstream>
#include <initializer_list>
#include <set>

#include "pagkit/error.hpp"
#include "pagkit/hash.hpp"
#include "pagkit/report.hpp"

#ifndef PAGKIT_VERSION
#define PAGKIT_VERSION "0.0.0"
#endif

namespace pagkit::report {

std::string_view version() noexcept { return PAGKIT_VERSION; }

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(ErrorCode::InvalidConfig, where + ": " + what);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) bad(where, "unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer() || it->get<std::int64_t>() < 0) bad(where, std::string(key) + " must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
      if (!it->is_number_integer()) bad(where, std::string(key) + " must be an integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) bad(where, std::string(key) + " must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) bad(where, std::string(key) + " must be true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) bad(where, std::string(key) + " must be a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    bad(where, std::string(key) + ": " + e.what());
  }
}

synth::LogNormal read_lognormal(const json& j, const synth::LogNormal& def, const std::string& where) {
  check_keys(j, {"median", "log_sd"}, where);
  synth::LogNormal d = def;
  read(j, "median", d.median, where);
  read(j, "log_sd", d.log_sd, where);
  return d;
}

std::array<double, 5> read_probs(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 5) bad(where, "expected five probabilities for PI-RADS 1..5");
  std::array<double, 5> p{};
  for (std::size_t i = 0; i < 5; ++i) {
    if (!j[i].is_number()) bad(where, "probabilities must be numbers");
    p[i] = j[i].get<double>();
  }
  return p;
}

synth::SynthConfig read_synth(const json& j) {
  const std::string w = "synth";
  check_keys(j,
             {"n_patients", "age_min", "age_max", "slices_min", "slices_max", "image_size", "gland_fraction",
              "age_signal", "signal_strength", "cspc_fraction", "cspc_age_shift", "noise_sd", "reference_age",
              "period_at_reference", "period_per_year", "covariates"},
             w);
  synth::SynthConfig s;
  read(j, "n_patients", s.n_patients, w);
  read(j, "age_min", s.age_min, w);
  read(j, "age_max", s.age_max, w);
  read(j, "slices_min", s.slices_min, w);
  read(j, "slices_max", s.slices_max, w);
  read(j, "image_size", s.image_size, w);
  read(j, "gland_fraction", s.gland_fraction, w);
  std::string signal = "ring_width";
  read(j, "age_signal", signal, w);
  if (signal == "ring_width") {
    s.age_signal = synth::AgeSignal::RingWidth;
  } else if (signal == "texture_frequency") {
    s.age_signal = synth::AgeSignal::TextureFrequency;
  } else {
    bad(w, "age_signal must be ring_width or texture_frequency");
  }
  read(j, "signal_strength", s.signal_strength, w);
  read(j, "cspc_fraction", s.cspc_fraction, w);
  read(j, "cspc_age_shift", s.cspc_age_shift, w);
  read(j, "noise_sd", s.noise_sd, w);
  read(j, "reference_age", s.reference_age, w);
  read(j, "period_at_reference", s.period_at_reference, w);
  read(j, "period_per_year", s.period_per_year, w);
  if (const auto it = j.find("covariates"); it != j.end()) {
    const std::string cw = "synth.covariates";
    check_keys(*it,
               {"psa_ncspc", "psa_cspc", "volume_ncspc", "volume_cspc", "pirads_ncspc", "pirads_cspc",
                "negative_biopsy_fraction"},
               cw);
    auto& c = s.covariates;
    if (it->contains("psa_ncspc")) c.psa_ncspc = read_lognormal(it->at("psa_ncspc"), c.psa_ncspc, cw);
    if (it->contains("psa_cspc")) c.psa_cspc = read_lognormal(it->at("psa_cspc"), c.psa_cspc, cw);
    if (it->contains("volume_ncspc")) c.volume_ncspc = read_lognormal(it->at("volume_ncspc"), c.volume_ncspc, cw);
    if (it->contains("volume_cspc")) c.volume_cspc = read_lognormal(it->at("volume_cspc"), c.volume_cspc, cw);
    if (it->contains("pirads_ncspc")) c.pirads_ncspc = read_probs(it->at("pirads_ncspc"), cw);
    if (it->contains("pirads_cspc")) c.pirads_cspc = read_probs(it->at("pirads_cspc"), cw);
    read(*it, "negative_biopsy_fraction", c.negative_biopsy_fraction, cw);
  }
  return s;
}

json lognormal_json(const synth::LogNormal& d) { return {{"median", d.median}, {"log_sd", d.log_sd}}; }

json synth_json(const synth::SynthConfig& s) {
  const auto& c = s.covariates;
  return {{"n_patients", s.n_patients},
          {"age_min", s.age_min},
          {"age_max", s.age_max},
          {"slices_min", s.slices_min},
          {"slices_max", s.slices_max},
          {"image_size", s.image_size},
          {"gland_fraction", s.gland_fraction},
          {"age_signal", s.age_signal == synth::AgeSignal::RingWidth ? "ring_width" : "texture_frequency"},
          {"signal_strength", s.signal_strength},
          {"cspc_fraction", s.cspc_fraction},
          {"cspc_age_shift", s.cspc_age_shift},
          {"noise_sd", s.noise_sd},
          {"reference_age", s.reference_age},
          {"period_at_reference", s.period_at_reference},
          {"period_per_year", s.period_per_year},
          {"covariates",
           {{"psa_ncspc", lognormal_json(c.psa_ncspc)},
            {"psa_cspc", lognormal_json(c.psa_cspc)},
            {"volume_ncspc", lognormal_json(c.volume_ncspc)},
            {"volume_cspc", lognormal_json(c.volume_cspc)},
            {"pirads_ncspc", c.pirads_ncspc},
            {"pirads_cspc", c.pirads_cspc},
            {"negative_biopsy_fraction", c.negative_biopsy_fraction}}}};
}

std::vector<regressor::LayerSpec> read_layers(const json& j) {
  const std::string w = "model.layers";
  if (!j.is_array() || j.empty()) bad(w, "expected a nonempty array");
  std::vector<regressor::LayerSpec> out;
  for (const auto& l : j) {
    check_keys(l, {"type", "channels", "kernel", "stride", "out_dim", "trainable"}, w);
    std::string type;
    read(l, "type", type, w);
    regressor::LayerSpec spec;
    if (type == "conv") {
      std::size_t ch = 0, k = 3, s = 1;
      read(l, "channels", ch, w);
      read(l, "kernel", k, w);
      read(l, "stride", s, w);
      spec = regressor::LayerSpec::conv(ch, k, s);
    } else if (type == "residual") {
      std::size_t ch = 0;
      read(l, "channels", ch, w);
      spec = regressor::LayerSpec::residual(ch);
    } else if (type == "relu") {
      spec = regressor::LayerSpec::relu();
    } else if (type == "global_avg_pool") {
      spec = regressor::LayerSpec::global_avg_pool();
    } else if (type == "dense") {
      std::size_t out_dim = 1;
      read(l, "out_dim", out_dim, w);
      spec = regressor::LayerSpec::dense(out_dim);
    } else {
      bad(w, "unknown layer type '" + type + "'");
    }
    read(l, "trainable", spec.trainable, w);
    out.push_back(spec);
  }
  return out;
}

json layers_json(const std::vector<regressor::LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) {
    json j;
    switch (l.kind) {
      case regressor::LayerSpec::Kind::Conv:
        j = {{"type", "conv"}, {"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}};
        break;
      case regressor::LayerSpec::Kind::Residual: j = {{"type", "residual"}, {"channels", l.channels}}; break;
      case regressor::LayerSpec::Kind::ReLU: j = {{"type", "relu"}}; break;
      case regressor::LayerSpec::Kind::GlobalAvgPool: j = {{"type", "global_avg_pool"}}; break;
      case regressor::LayerSpec::Kind::Dense: j = {{"type", "dense"}, {"out_dim", l.channels}}; break;
    }
    j["trainable"] = l.trainable;
    arr.push_back(j);
  }
  return arr;
}

std::string_view table_test_name(cohort::ContinuousTest t) {
  switch (t) {
    case cohort::ContinuousTest::Welch: return "welch";
    case cohort::ContinuousTest::MannWhitney: return "mann_whitney";
    case cohort::ContinuousTest::Permutation: return "permutation";
  }
  return "welch";
}

}  // namespace

json RunConfig::resolved() const {
  json j;
  j["seed"] = seed;
  if (synth) j["synth"] = synth_json(*synth);
  j["cohort_csv"] = cohort_csv.generic_string();
  j["preprocess"] = {{"normalize", preprocess.normalize.kind == imaging::NormalizeMethod::Kind::MinMax
                                       ? "minmax"
                                       : "percentile_clip"},
                     {"p_lo", preprocess.normalize.p_lo},
                     {"p_hi", preprocess.normalize.p_hi},
                     {"margin", preprocess.margin},
                     {"input_size", preprocess.input_size},
                     {"slice_rule", preprocess.slice_rule == imaging::SliceRule::NonzeroMask ? "nonzero_mask"
                                                                                             : "all_slices"}};
  j["split"] = {{"train_fraction", split.train_fraction}, {"k_folds", split.k_folds}};
  j["model"] = {{"layers", layers_json(model.layers)}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"augment_probability", train.augment_probability},
                {"arbitrary_rotation", train.arbitrary_rotation},
                {"max_rotation_degrees", train.max_rotation_degrees}};
  json models = json::array();
  for (auto m : analysis.models) models.push_back(std::string(stats::to_string(m)));
  j["analysis"] = {{"models", models},
                   {"bootstrap",
                    {{"n_replicates", analysis.bootstrap.n_replicates},
                     {"stratified", analysis.bootstrap.stratified},
                     {"subsample", analysis.bootstrap.subsample},
                     {"subsample_fraction", analysis.bootstrap.subsample_fraction}}},
                   {"fpr_points", analysis.fpr_points},
                   {"table_test", std::string(table_test_name(analysis.table_test))},
                   {"n_perm", analysis.n_perm}};
  return j;
}

std::uint64_t RunConfig::hash() const { return fnv1a(resolved().dump()); }

RunConfig parse_config(const json& doc, std::optional<std::uint64_t> seed_override,
                       std::optional<fs::path> out_override) {
  check_keys(doc, {"seed", "out_dir", "threads", "synth", "cohort_csv", "preprocess", "split", "model", "train",
                   "analysis"},
             "config");
  RunConfig c;
  read(doc, "seed", c.seed, "config");
  std::string out = c.out_dir.string();
  read(doc, "out_dir", out, "config");
  c.out_dir = out;
  read(doc, "threads", c.threads, "config");
  if (c.threads < 1) bad("config", "threads must be at least 1");
  if (seed_override) c.seed = *seed_override;
  if (out_override) c.out_dir = *out_override;

  if (const auto it = doc.find("synth"); it != doc.end()) c.synth = read_synth(*it);
  std::string cohort;
  read(doc, "cohort_csv", cohort, "config");
  c.cohort_csv = cohort;

  if (const auto it = doc.find("preprocess"); it != doc.end()) {
    const std::string w = "preprocess";
    check_keys(*it, {"normalize", "p_lo", "p_hi", "margin", "input_size", "slice_rule"}, w);
    std::string norm = "percentile_clip";
    read(*it, "normalize", norm, w);
    if (norm == "minmax") {
      c.preprocess.normalize = imaging::NormalizeMethod::minmax();
    } else if (norm != "percentile_clip") {
      bad(w, "normalize must be percentile_clip or minmax");
    }
    if (norm == "percentile_clip") {
      read(*it, "p_lo", c.preprocess.normalize.p_lo, w);
      read(*it, "p_hi", c.preprocess.normalize.p_hi, w);
      if (!(c.preprocess.normalize.p_lo >= 0.0 && c.preprocess.normalize.p_lo < c.preprocess.normalize.p_hi &&
            c.preprocess.normalize.p_hi <= 100.0)) {
        bad(w, "percentiles must satisfy 0 <= p_lo < p_hi <= 100");
      }
    }
    read(*it, "margin", c.preprocess.margin, w);
    if (c.preprocess.margin < 0) bad(w, "margin must be non-negative");
    read(*it, "input_size", c.preprocess.input_size, w);
    if (c.preprocess.input_size < 4) bad(w, "input_size must be at least 4");
    std::string rule = "nonzero_mask";
    read(*it, "slice_rule", rule, w);
    if (rule == "all_slices") {
      c.preprocess.slice_rule = imaging::SliceRule::AllSlices;
    } else if (rule != "nonzero_mask") {
      bad(w, "slice_rule must be nonzero_mask or all_slices");
    }
  }

  if (const auto it = doc.find("split"); it != doc.end()) {
    check_keys(*it, {"train_fraction", "k_folds"}, "split");
    read(*it, "train_fraction", c.split.train_fraction, "split");
    read(*it, "k_folds", c.split.k_folds, "split");
  }
  if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0)) bad("split", "train_fraction must lie in (0, 1)");
  if (c.split.k_folds < 2) bad("split", "k_folds must be at least 2");

  c.model = regressor::ModelConfig::desk_default(c.preprocess.input_size);
  if (const auto it = doc.find("model"); it != doc.end()) {
    check_keys(*it, {"layers"}, "model");
    if (it->contains("layers")) c.model.layers = read_layers(it->at("layers"));
  }
  try {
    regressor::Network check(c.model);
  } catch (const Error& e) {
    bad("model", e.what());
  }

  if (const auto it = doc.find("train"); it != doc.end()) {
    const std::string w = "train";
    check_keys(*it, {"epochs", "batch_size", "learning_rate", "augment_probability", "arbitrary_rotation",
                     "max_rotation_degrees"},
               w);
    read(*it, "epochs", c.train.epochs, w);
    read(*it, "batch_size", c.train.batch_size, w);
    read(*it, "learning_rate", c.train.learning_rate, w);
    read(*it, "augment_probability", c.train.augment_probability, w);
    read(*it, "arbitrary_rotation", c.train.arbitrary_rotation, w);
    read(*it, "max_rotation_degrees", c.train.max_rotation_degrees, w);
  }
  c.train.seed = c.seed;
  c.train.validate();

  if (const auto it = doc.find("analysis"); it != doc.end()) {
    const std::string w = "analysis";
    check_keys(*it, {"models", "bootstrap", "fpr_points", "table_test", "n_perm"}, w);
    if (const auto m = it->find("models"); m != it->end()) {
      if (!m->is_array()) bad(w, "models must be an array of model ids");
      c.analysis.models.clear();
      for (const auto& id : *m) {
        const auto parsed = id.is_string() ? stats::parse_model_id(id.get<std::string>()) : std::nullopt;
        if (!parsed) bad(w, "unknown model id " + id.dump());
        c.analysis.models.push_back(*parsed);
      }
    }
    if (const auto b = it->find("bootstrap"); b != it->end()) {
      check_keys(*b, {"n_replicates", "stratified", "subsample", "subsample_fraction"}, "analysis.bootstrap");
      read(*b, "n_replicates", c.analysis.bootstrap.n_replicates, "analysis.bootstrap");
      read(*b, "stratified", c.analysis.bootstrap.stratified, "analysis.bootstrap");
      read(*b, "subsample", c.analysis.bootstrap.subsample, "analysis.bootstrap");
      read(*b, "subsample_fraction", c.analysis.bootstrap.subsample_fraction, "analysis.bootstrap");
    }
    if (const auto f = it->find("fpr_points"); f != it->end()) {
      if (!f->is_array() || f->empty()) bad(w, "fpr_points must be a nonempty array");
      c.analysis.fpr_points.clear();
      for (const auto& x : *f) {
        if (!x.is_number() || x.get<double>() < 0.0 || x.get<double>() > 1.0) bad(w, "fpr_points must lie in [0, 1]");
        c.analysis.fpr_points.push_back(x.get<double>());
      }
    }
    std::string test = "welch";
    read(*it, "table_test", test, w);
    if (test == "mann_whitney") {
      c.analysis.table_test = cohort::ContinuousTest::MannWhitney;
    } else if (test == "permutation") {
      c.analysis.table_test = cohort::ContinuousTest::Permutation;
    } else if (test != "welch") {
      bad(w, "table_test must be welch, mann_whitney or permutation");
    }
    read(*it, "n_perm", c.analysis.n_perm, w);
  }
  if (c.analysis.bootstrap.n_replicates < 1) bad("analysis.bootstrap", "n_replicates must be at least 1");
  if (c.analysis.n_perm < 1) bad("analysis", "n_perm must be at least 1");
  if (c.analysis.bootstrap.subsample && !(c.analysis.bootstrap.subsample_fraction > 0.0 &&
                                          c.analysis.bootstrap.subsample_fraction <= 1.0)) {
    bad("analysis.bootstrap", "subsample_fraction must lie in (0, 1]");
  }
  c.analysis.bootstrap.seed = c.seed;
  c.analysis.bootstrap.threads = c.threads;

  if (c.synth) {
    c.synth->seed = c.seed;
    c.synth->validate();
  }
  return c;
}

RunConfig load_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed_override,
                      std::optional<fs::path> out_override) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) fail(ErrorCode::InvalidConfig, "cannot open config " + path->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::InvalidConfig, path->string() + ": " + e.what());
    }
  }
  return parse_config(doc, seed_override, out_override);
}

}  // namespace pagkit::report
