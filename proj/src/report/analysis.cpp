#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/report.hpp"
#include "pagkit/stats/descriptive.hpp"
#include "pagkit/stats/tests.hpp"

namespace pagkit::report {

namespace {

using stats::Covariate;

struct ScoreModel {
  std::string name;
  std::vector<Covariate> covariates;
};

/// Logistic risk scores compared in the ROC analysis.
const std::vector<ScoreModel>& score_models() {
  static const std::vector<ScoreModel> models{
      {"pag_adjusted", stats::model_covariates(stats::ModelId::II)},
      {"pirads_adjusted", {Covariate::PiradsGe3, Covariate::Age, Covariate::VolumeMl, Covariate::Psa}},
      {"base", {Covariate::Age, Covariate::VolumeMl, Covariate::Psa}},
  };
  return models;
}

constexpr const char* kPiradsUnadjusted = "pirads_unadjusted";

json error_json(const Error& e) { return {{"error", std::string(e.name())}, {"message", e.what()}}; }

json test_json(const stats::TestResult& t) {
  json j = {{"statistic", t.statistic}, {"p_value", t.p_value}, {"method", t.method}};
  if (!std::isnan(t.df)) j["df"] = t.df;
  return j;
}

json group_json(const std::vector<double>& values) {
  json j = {{"n", values.size()}, {"values", values}};
  j["mean"] = values.empty() ? json(nullptr) : json(stats::mean(values));
  j["sd"] = values.size() < 2 ? json(nullptr) : json(stats::sample_sd(values));
  return j;
}

// Points are [fpr, tpr, threshold]; the leading +inf threshold is null.
json roc_json(const std::string& name, const stats::RocCurve& roc, const stats::BootstrapAuc& boot,
              const stats::BootstrapOptions& options) {
  json pts = json::array();
  for (const auto& p : roc.points) {
    pts.push_back(json::array({p.fpr, p.tpr, std::isinf(p.threshold) ? json(nullptr) : json(p.threshold)}));
  }
  return {{"name", name},
          {"auc", roc.auc},
          {"ci_low", boot.ci_low},
          {"ci_high", boot.ci_high},
          {"n_replicates", options.n_replicates},
          {"seed", options.seed},
          {"n_pos", roc.n_pos},
          {"n_neg", roc.n_neg},
          {"points", pts}};
}

json confusion_json(const std::string& model, const stats::ConfusionMatrix& cm) {
  return {{"model", model},
          {"fpr_target", cm.fpr_target},
          {"threshold", cm.threshold},
          {"tp", cm.tp},
          {"fp", cm.fp},
          {"tn", cm.tn},
          {"fn", cm.fn},
          {"achieved_fpr", cm.achieved_fpr},
          {"achieved_tpr", cm.achieved_tpr}};
}

json two_group_tests(const std::vector<double>& a, const std::vector<double>& b, const AnalysisOptions& options,
                     std::uint64_t seed) {
  json out;
  auto attempt = [&](const char* key, auto&& fn) {
    try {
      out[key] = test_json(fn());
    } catch (const Error& e) {
      out[key] = error_json(e);
    }
  };
  attempt("welch_t", [&] { return stats::welch_t_test(a, b); });
  attempt("mann_whitney", [&] { return stats::mann_whitney_u(a, b); });
  attempt("permutation", [&] {
    if (a.empty() || b.empty()) fail(ErrorCode::TooFewSamples, "permutation test needs both groups");
    return stats::permutation_test(a, b, stats::PermutationStatistic::MeanDiff, options.n_perm, seed);
  });
  return out;
}

std::string adjustment_cell(stats::ModelId m) {
  const auto cov = stats::model_covariates(m);
  std::string out;
  for (std::size_t i = 1; i < cov.size(); ++i) {
    if (!out.empty()) out += '+';
    out += stats::to_string(cov[i]);
  }
  return out.empty() ? "-" : out;
}

}  // namespace

bool is_low_pirads_cspc(const gap::AnalysisRow& row) {
  return row.label == cohort::Label::CsPC && row.pirads && *row.pirads <= 2;
}

json analyze_rows(std::span<const gap::AnalysisRow> rows, const AnalysisOptions& options, std::uint64_t seed) {
  if (rows.empty()) fail(ErrorCode::TooFewSamples, "no patients to analyze");
  std::vector<int> labels;
  for (const auto& r : rows) labels.push_back(r.label == cohort::Label::CsPC ? 1 : 0);

  json bundle;
  bundle["n_patients"] = rows.size();
  bundle["n_cspc"] = std::count(labels.begin(), labels.end(), 1);
  bundle["n_ncspc"] = std::count(labels.begin(), labels.end(), 0);

  json ors = json::array();
  for (auto m : options.models) {
    json entry = {{"model", std::string(stats::to_string(m))},
                  {"adjustment", stats::model_adjustment(m)},
                  {"covariates", adjustment_cell(m)}};
    try {
      const auto fit = stats::fit_logistic(stats::build_design(rows, m));
      const auto o = stats::odds_ratio(fit, "pag");
      entry.update(json{{"or", o.odds_ratio},
                        {"ci_low", o.ci_low},
                        {"ci_high", o.ci_high},
                        {"p_value", o.p_value},
                        {"beta", o.beta},
                        {"se", o.se},
                        {"n_iter", fit.n_iter}});
    } catch (const Error& e) {
      entry.update(error_json(e));
    }
    ors.push_back(entry);
  }
  bundle["odds_ratios"] = ors;

  std::map<std::string, std::vector<double>> scores;
  json rocs = json::object();
  for (const auto& sm : score_models()) {
    try {
      const auto design = stats::build_design(rows, sm.covariates);
      const auto fit = stats::fit_logistic(design);
      auto risk = stats::predicted_risk(fit, design);
      const auto roc = stats::roc_curve(risk, labels);
      const auto boot = stats::bootstrap_auc(risk, labels, options.bootstrap);
      json j = roc_json(sm.name, roc, boot, options.bootstrap);
      json cov = json::array();
      for (auto c : sm.covariates) cov.push_back(std::string(stats::to_string(c)));
      j["covariates"] = cov;
      rocs[sm.name] = j;
      scores[sm.name] = std::move(risk);
    } catch (const Error& e) {
      rocs[sm.name] = error_json(e);
      rocs[sm.name]["name"] = sm.name;
    }
  }
  try {
    std::vector<double> pirads;
    for (const auto& r : rows) {
      if (!r.pirads) fail(ErrorCode::MissingCovariate, "patient " + r.patient_id + " has no PI-RADS");
      pirads.push_back(static_cast<double>(*r.pirads));
    }
    const auto roc = stats::roc_curve(pirads, labels);
    rocs[kPiradsUnadjusted] = roc_json(kPiradsUnadjusted, roc, stats::bootstrap_auc(pirads, labels, options.bootstrap),
                                       options.bootstrap);
    rocs[kPiradsUnadjusted]["covariates"] = json::array({"pirads"});
    scores[kPiradsUnadjusted] = std::move(pirads);
  } catch (const Error& e) {
    rocs[kPiradsUnadjusted] = error_json(e);
    rocs[kPiradsUnadjusted]["name"] = kPiradsUnadjusted;
  }
  bundle["roc"] = rocs;

  json comparisons = json::array();
  for (const auto& [a, b] : {std::pair<std::string, std::string>{"pag_adjusted", "base"},
                             std::pair<std::string, std::string>{"pag_adjusted", "pirads_adjusted"}}) {
    json entry = {{"a", a}, {"b", b}};
    if (scores.contains(a) && scores.contains(b)) {
      try {
        entry.update(test_json(stats::compare_auc(scores[a], scores[b], labels, options.bootstrap)));
        entry["n_replicates"] = options.bootstrap.n_replicates;
      } catch (const Error& e) {
        entry.update(error_json(e));
      }
    } else {
      entry.update(json{{"error", "MissingScore"}, {"message", "one of the compared models could not be fit"}});
    }
    comparisons.push_back(entry);
  }
  bundle["auc_comparisons"] = comparisons;

  json confusion = json::array();
  for (const auto* name : {"pag_adjusted", "pirads_adjusted", kPiradsUnadjusted}) {
    if (!scores.contains(name)) continue;
    for (double f : options.fpr_points) confusion.push_back(confusion_json(name, stats::confusion_at_fpr(scores[name], labels, f)));
  }
  bundle["confusion_matrices"] = confusion;

  std::vector<double> pag_ncspc;
  std::vector<double> pag_cspc;
  std::vector<double> pag_low;
  for (const auto& r : rows) {
    (r.label == cohort::Label::CsPC ? pag_cspc : pag_ncspc).push_back(r.pag);
    if (is_low_pirads_cspc(r)) pag_low.push_back(r.pag);
  }
  bundle["pag_groups"] = {{"ncsPC", group_json(pag_ncspc)},
                          {"csPC", group_json(pag_cspc)},
                          {"csPC_pirads_le2", group_json(pag_low)}};
  bundle["pag_tests"] = {{"csPC_vs_ncsPC", two_group_tests(pag_cspc, pag_ncspc, options, seed)},
                         {"csPC_pirads_le2_vs_ncsPC", two_group_tests(pag_low, pag_ncspc, options, seed)}};
  return bundle;
}

namespace {

std::string or_csv(const json& ors) {
  std::string text = "model,adjustment,or,ci_low,ci_high,p_value\n";
  auto cell = [](const json& e, const char* key) {
    return e.contains(key) && e[key].is_number() ? csv::format_number(e[key].get<double>()) : std::string();
  };
  for (const auto& e : ors) {
    text += e["model"].get<std::string>() + ',' + e["covariates"].get<std::string>() + ',' + cell(e, "or") + ',' +
            cell(e, "ci_low") + ',' + cell(e, "ci_high") + ',' + cell(e, "p_value") + '\n';
  }
  return text;
}

std::string confusion_csv(const json& cms) {
  std::string text = "model,fpr_target,threshold,tp,fp,tn,fn,achieved_fpr,achieved_tpr\n";
  for (const auto& c : cms) {
    text += c["model"].get<std::string>() + ',' + csv::format_number(c["fpr_target"].get<double>()) + ',' +
            csv::format_number(c["threshold"].get<double>()) + ',' + std::to_string(c["tp"].get<std::size_t>()) + ',' +
            std::to_string(c["fp"].get<std::size_t>()) + ',' + std::to_string(c["tn"].get<std::size_t>()) + ',' +
            std::to_string(c["fn"].get<std::size_t>()) + ',' + csv::format_number(c["achieved_fpr"].get<double>()) +
            ',' + csv::format_number(c["achieved_tpr"].get<double>()) + '\n';
  }
  return text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

json cmd_analyze(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  if (!fs::exists(layout.pag_test())) fail(ErrorCode::IoError, "missing PAG table " + layout.pag_test().string());
  const auto test_rows = gap::read_pag_csv(layout.pag_test());
  json bundle = analyze_rows(test_rows, cfg.analysis, cfg.seed);
  bundle["provenance"] = provenance(cfg);
  const fs::path dir = layout.analysis_dir();

  // Baseline tables need the clinical records (biopsy type is not in the PAG table).
  if (fs::exists(layout.included_cohort())) {
    std::map<std::string, cohort::PatientRecord> records;
    for (auto& r : cohort::read_cohort_csv(layout.included_cohort())) records.emplace(r.patient_id, std::move(r));
    auto table_for = [&](std::span<const gap::AnalysisRow> rows, const cohort::TableOptions& opts, const fs::path& out) {
      std::vector<cohort::PatientRecord> recs;
      std::vector<double> pags;
      for (const auto& row : rows) {
        const auto it = records.find(row.patient_id);
        if (it == records.end()) fail(ErrorCode::ParseError, "patient " + row.patient_id + " missing from the cohort");
        recs.push_back(it->second);
        pags.push_back(row.pag);
      }
      cohort::write_table_csv(cohort::baseline_table(recs, pags, opts), out);
      record_output(cfg, out);
    };
    if (fs::exists(layout.pag_train())) {
      const auto train_rows = gap::read_pag_csv(layout.pag_train());
      table_for(train_rows, cohort::TableOptions{}, dir / "table1.csv");
    }
    cohort::TableOptions grouped;
    grouped.grouped = true;
    grouped.continuous_test = cfg.analysis.table_test;
    grouped.n_perm = cfg.analysis.n_perm;
    grouped.seed = cfg.seed;
    table_for(test_rows, grouped, dir / "table2.csv");
  }

  write_output(cfg, dir / "odds_ratios.csv", or_csv(bundle["odds_ratios"]));
  write_output(cfg, dir / "confusion_matrices.csv", confusion_csv(bundle["confusion_matrices"]));
  for (const auto& [name, roc] : bundle["roc"].items()) {
    json doc = roc;
    doc["provenance"] = bundle["provenance"];
    write_output(cfg, dir / ("roc_" + name + ".json"), dump(doc));
  }
  write_output(cfg, dir / "auc_comparison.json",
               dump({{"provenance", bundle["provenance"]}, {"comparisons", bundle["auc_comparisons"]}}));
  write_output(cfg, dir / "pag_groups.json",
               dump({{"provenance", bundle["provenance"]}, {"groups", bundle["pag_groups"]}, {"tests", bundle["pag_tests"]}}));
  write_output(cfg, layout.bundle(), dump(bundle));

  const bool any_fit = std::any_of(bundle["odds_ratios"].begin(), bundle["odds_ratios"].end(),
                                   [](const json& e) { return !e.contains("error"); });
  if (!any_fit && !bundle["odds_ratios"].empty()) {
    const std::string first = bundle["odds_ratios"][0]["error"].get<std::string>();
    ErrorCode code = ErrorCode::NotConverged;
    for (auto c : {ErrorCode::QuasiSeparation, ErrorCode::Singular, ErrorCode::OneClassOutcome, ErrorCode::NotConverged,
                   ErrorCode::TooFewSamples, ErrorCode::MissingCovariate}) {
      if (to_string(c) == first) code = c;
    }
    fail(code, "no logistic model could be fit; see " + layout.bundle().string());
  }
  return bundle;
}

}  // namespace pagkit::report
