#include "pagkit/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/random.hpp"
#include "pagkit/stats/descriptive.hpp"
#include "pagkit/stats/tests.hpp"

namespace pagkit::cohort {

std::string_view to_string(BiopsyType t) noexcept {
  switch (t) {
    case BiopsyType::Systematic: return "Systematic";
    case BiopsyType::MRIGuided: return "MRIGuided";
    case BiopsyType::MRIPlusSystematic: return "MRIPlusSystematic";
  }
  return "?";
}

std::optional<BiopsyType> parse_biopsy_type(std::string_view s) {
  if (s == "Systematic") return BiopsyType::Systematic;
  if (s == "MRIGuided") return BiopsyType::MRIGuided;
  if (s == "MRIPlusSystematic") return BiopsyType::MRIPlusSystematic;
  return std::nullopt;
}

std::string_view to_string(Label l) noexcept { return l == Label::CsPC ? "csPC" : "ncsPC"; }

std::optional<Label> parse_label(std::string_view s) {
  if (s == "csPC") return Label::CsPC;
  if (s == "ncsPC") return Label::NcsPC;
  return std::nullopt;
}

Label assign_label(const PatientRecord& r) {
  if (!r.gleason) fail(ErrorCode::MissingGleason, "patient " + r.patient_id);
  if (r.gleason->negative) return Label::NcsPC;
  return r.gleason->score >= 7 ? Label::CsPC : Label::NcsPC;
}

namespace {

/// Returns the drop reason for a baseline record, or nullptr to keep it.
const char* exclusion_reason(PatientRecord& r, const ImageResolver& resolver) {
  if (!r.age) return reason::kMissingDemographic;
  if (!r.psa || !r.volume_ml || !r.biopsy_type || !r.gleason) return reason::kMissingClinical;
  if (r.volume_path.empty() || r.mask_path.empty()) return reason::kMissingAnnotation;
  if (resolver && !resolver(r)) return reason::kMissingAnnotation;
  if (!(*r.age > 0.0) || !(*r.psa >= 0.0) || !(*r.volume_ml > 0.0)) return reason::kFaultyClinical;
  if (r.pirads && (*r.pirads < 1 || *r.pirads > 5)) return reason::kFaultyClinical;
  if (!r.gleason->negative && (r.gleason->score < 2 || r.gleason->score > 10)) return reason::kFaultyClinical;
  const double derived = *r.psa / *r.volume_ml;
  if (r.psad) {
    if (std::fabs(*r.psad - derived) > 1e-6 * std::max(1.0, std::fabs(*r.psad))) return reason::kFaultyClinical;
  } else {
    r.psad = derived;
  }
  return nullptr;
}

}  // namespace

InclusionResult apply_inclusion_criteria(std::span<const PatientRecord> records, const ImageResolver& resolver) {
  // earliest visit per patient; ties keep the first row seen
  std::map<std::string, std::size_t> baseline;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = baseline.try_emplace(records[i].patient_id, i);
    if (!inserted && records[i].visit_index < records[it->second].visit_index) it->second = i;
  }

  InclusionResult result;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (baseline.at(records[i].patient_id) != i) {
      ++result.excluded[reason::kNonBaseline];
      continue;
    }
    PatientRecord r = records[i];
    if (const char* why = exclusion_reason(r, resolver)) {
      ++result.excluded[why];
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

SplitAssignment split_train_test(std::span<const std::string> ids, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorCode::InvalidArgument, "split fraction must be in (0, 1)");
  const std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) fail(ErrorCode::DuplicateIds, "split input contains duplicate patient ids");

  std::vector<std::string> order(ids.begin(), ids.end());
  Rng rng = make_rng(seed, 0);
  fisher_yates(std::span<std::string>(order), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size()) + 1e-9));

  SplitAssignment s;
  s.seed = seed;
  s.train_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

std::vector<std::vector<std::string>> make_cv_folds(std::span<const std::string> train_ids, std::size_t k,
                                                    std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::InvalidArgument, "cross-validation needs k >= 2");
  if (train_ids.size() < k) {
    fail(ErrorCode::TooFewPatients, std::to_string(train_ids.size()) + " patients for " + std::to_string(k) + " folds");
  }
  const std::set<std::string> unique(train_ids.begin(), train_ids.end());
  if (unique.size() != train_ids.size()) fail(ErrorCode::DuplicateIds, "fold input contains duplicate patient ids");

  std::vector<std::string> order(train_ids.begin(), train_ids.end());
  Rng rng = make_rng(seed, 1);
  fisher_yates(std::span<std::string>(order), rng);

  std::vector<std::vector<std::string>> folds(k);
  const std::size_t base = order.size() / k;
  const std::size_t extra = order.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

void validate_split(const SplitAssignment& split) {
  const std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
  for (const auto& id : split.test_ids) {
    if (train.count(id)) fail(ErrorCode::PatientLeakage, "patient " + id + " is in both train and test");
  }
  if (split.folds.empty()) return;
  std::set<std::string> seen;
  std::size_t min_size = split.folds.front().size();
  std::size_t max_size = min_size;
  for (const auto& fold : split.folds) {
    min_size = std::min(min_size, fold.size());
    max_size = std::max(max_size, fold.size());
    for (const auto& id : fold) {
      if (!seen.insert(id).second) fail(ErrorCode::PatientLeakage, "patient " + id + " appears in two folds");
      if (!train.count(id)) fail(ErrorCode::InvalidArgument, "fold patient " + id + " is not a training patient");
    }
  }
  if (seen.size() != train.size()) fail(ErrorCode::InvalidArgument, "folds do not cover every training patient");
  if (max_size - min_size > 1) fail(ErrorCode::InvalidArgument, "fold sizes differ by more than one");
}

// Summary tables ------------------------------------------------------------

namespace {

struct Group {
  std::vector<const PatientRecord*> records;
  std::vector<double> pags;
};

std::string mean_sd(std::span<const double> x, int decimals) {
  if (x.empty()) return "-";
  return csv::format_fixed(stats::mean(x), decimals) + " ± " + csv::format_fixed(stats::sample_sd(x), decimals);
}

// Percentages are truncated, not rounded, to two decimals: 204 of 212 prints as 96.22.
std::string count_pct(std::size_t count, std::size_t total) {
  const double pct = total ? 100.0 * static_cast<double>(count) / static_cast<double>(total) : 0.0;
  const double truncated = std::floor(pct * 100.0 + 1e-7) / 100.0;
  return std::to_string(count) + " (" + csv::format_fixed(truncated, 2) + ")";
}

std::optional<double> continuous_p(const std::vector<std::vector<double>>& samples, const TableOptions& opt,
                                   std::string& test) {
  if (samples.size() != 2) return std::nullopt;
  try {
    switch (opt.continuous_test) {
      case ContinuousTest::Welch:
        test = "welch_t";
        return stats::welch_t_test(samples[0], samples[1]).p_value;
      case ContinuousTest::MannWhitney:
        test = "mann_whitney";
        return stats::mann_whitney_u(samples[0], samples[1]).p_value;
      case ContinuousTest::Permutation:
        test = "permutation_t";
        return stats::permutation_test(samples[0], samples[1], stats::PermutationStatistic::TStat, opt.n_perm,
                                       opt.seed)
            .p_value;
    }
  } catch (const Error&) {
    test.clear();
  }
  return std::nullopt;
}

}  // namespace

TableSummary baseline_table(std::span<const PatientRecord> records, std::span<const double> pags,
                            const TableOptions& options) {
  if (records.empty()) fail(ErrorCode::InvalidArgument, "baseline table of an empty cohort");
  if (!pags.empty() && pags.size() != records.size()) {
    fail(ErrorCode::InvalidArgument, "PAG values must parallel the records");
  }

  std::vector<Group> groups(options.grouped ? 2 : 1);
  TableSummary table;
  if (options.grouped) {
    table.groups = {"ncsPC", "csPC"};
  } else {
    table.groups = {"all"};
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t g = options.grouped ? (assign_label(records[i]) == Label::CsPC ? 1 : 0) : 0;
    groups[g].records.push_back(&records[i]);
    if (!pags.empty()) groups[g].pags.push_back(pags[i]);
  }
  for (const auto& g : groups) table.group_sizes.push_back(g.records.size());

  auto continuous = [&](const std::string& name, auto getter, int decimals) {
    TableRow row{name, "", {}, std::nullopt, ""};
    std::vector<std::vector<double>> samples;
    for (const auto& g : groups) {
      std::vector<double> xs;
      for (const auto* r : g.records) {
        if (auto v = getter(*r)) xs.push_back(*v);
      }
      row.cells.push_back(mean_sd(xs, decimals));
      samples.push_back(std::move(xs));
    }
    if (options.grouped) row.p_value = continuous_p(samples, options, row.test);
    table.rows.push_back(std::move(row));
  };

  // levels: (label, predicate); records where `applicable` is false are not counted
  auto categorical = [&](const std::string& name, const std::vector<std::string>& levels, auto level_of) {
    std::vector<std::vector<double>> counts(groups.size(), std::vector<double>(levels.size(), 0.0));
    std::vector<std::size_t> totals(groups.size(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (const auto* r : groups[g].records) {
        if (auto lvl = level_of(*r)) {
          counts[g][*lvl] += 1.0;
          ++totals[g];
        }
      }
    }
    TableRow header{name, "", {}, std::nullopt, ""};
    if (options.grouped) {
      const auto res = stats::chi_square_test(counts, levels.size() == 2);
      header.p_value = res.p_value;
      header.test = res.method;
    }
    table.rows.push_back(std::move(header));
    for (std::size_t l = 0; l < levels.size(); ++l) {
      TableRow row{name, levels[l], {}, std::nullopt, ""};
      for (std::size_t g = 0; g < groups.size(); ++g) {
        row.cells.push_back(count_pct(static_cast<std::size_t>(counts[g][l]), totals[g]));
      }
      table.rows.push_back(std::move(row));
    }
  };

  continuous("Age (years)", [](const PatientRecord& r) { return r.age; }, 2);
  if (!pags.empty()) {
    TableRow row{"PAG (years)", "", {}, std::nullopt, ""};
    std::vector<std::vector<double>> samples;
    for (const auto& g : groups) {
      row.cells.push_back(mean_sd(g.pags, 2));
      samples.push_back(g.pags);
    }
    if (options.grouped) row.p_value = continuous_p(samples, options, row.test);
    table.rows.push_back(std::move(row));
  }
  continuous("PSA (ng/mL)", [](const PatientRecord& r) { return r.psa; }, 2);
  categorical("PSA > 3 ng/mL", {"Yes", "No"}, [](const PatientRecord& r) -> std::optional<std::size_t> {
    if (!r.psa) return std::nullopt;
    return *r.psa > 3.0 ? 0 : 1;
  });
  continuous("Prostate volume (mL)", [](const PatientRecord& r) { return r.volume_ml; }, 2);
  continuous("PSAd (ng/mL2)", [](const PatientRecord& r) { return r.psad; }, 3);
  categorical("PI-RADS >= 3", {"Yes", "No"}, [](const PatientRecord& r) -> std::optional<std::size_t> {
    if (!r.pirads) return std::nullopt;
    return *r.pirads >= 3 ? 0 : 1;
  });
  categorical("Biopsy Type", {"Systematic", "MRI guided", "MRI (+Systematic)"},
              [](const PatientRecord& r) -> std::optional<std::size_t> {
                if (!r.biopsy_type) return std::nullopt;
                return static_cast<std::size_t>(*r.biopsy_type);
              });
  return table;
}

void write_table_csv(const TableSummary& table, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "characteristic,level";
  for (std::size_t g = 0; g < table.groups.size(); ++g) {
    out << ',' << table.groups[g] << " (N = " << table.group_sizes[g] << ')';
  }
  const bool grouped = table.groups.size() > 1;
  if (grouped) out << ",p_value,test";
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.characteristic << ',' << row.level;
    for (std::size_t g = 0; g < table.groups.size(); ++g) {
      out << ',' << (g < row.cells.size() ? row.cells[g] : std::string("-"));
    }
    if (grouped) {
      out << ',' << (row.p_value ? csv::format_fixed(*row.p_value, 3) : std::string()) << ',' << row.test;
    }
    out << '\n';
  }
  csv::write_text(path, out.str());
}

// Cohort CSV ------------------------------------------------------------------

std::vector<PatientRecord> read_cohort_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, std::string_view(kCohortHeader));
  std::vector<PatientRecord> out;
  out.reserve(t.rows.size());
  for (const auto& f : t.rows) {
    PatientRecord r;
    r.patient_id = f[0];
    if (r.patient_id.empty()) fail(ErrorCode::ParseError, path.string() + ": empty patient_id");
    r.visit_index = csv::parse_optional_int(f[1], "visit_index").value_or(0);
    r.age = csv::parse_optional_double(f[2], "age");
    r.psa = csv::parse_optional_double(f[3], "psa");
    r.volume_ml = csv::parse_optional_double(f[4], "volume_ml");
    r.psad = csv::parse_optional_double(f[5], "psad");
    r.pirads = csv::parse_optional_int(f[6], "pirads");
    if (!f[7].empty()) {
      r.biopsy_type = parse_biopsy_type(f[7]);
      if (!r.biopsy_type) fail(ErrorCode::ParseError, path.string() + ": unknown biopsy type '" + f[7] + "'");
    }
    if (f[8] == "negative" || f[8] == "Negative") {
      r.gleason = Gleason::negative_exam();
    } else if (auto g = csv::parse_optional_int(f[8], "gleason")) {
      r.gleason = Gleason::of(*g);
    }
    r.volume_path = f[9];
    r.mask_path = f[10];
    out.push_back(std::move(r));
  }
  return out;
}

void write_cohort_csv(std::span<const PatientRecord> records, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kCohortHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  for (const auto& r : records) {
    out << r.patient_id << ',' << r.visit_index << ',' << opt(r.age) << ',' << opt(r.psa) << ','
        << opt(r.volume_ml) << ',' << opt(r.psad) << ',' << (r.pirads ? std::to_string(*r.pirads) : "") << ','
        << (r.biopsy_type ? std::string(to_string(*r.biopsy_type)) : "") << ','
        << (r.gleason ? (r.gleason->negative ? std::string("negative") : std::to_string(r.gleason->score)) : "")
        << ',' << r.volume_path << ',' << r.mask_path << '\n';
  }
  csv::write_text(path, out.str());
}

}  // namespace pagkit::cohort
