#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pagkit::cohort {

enum class BiopsyType { Systematic, MRIGuided, MRIPlusSystematic };

std::string_view to_string(BiopsyType t) noexcept;
std::optional<BiopsyType> parse_biopsy_type(std::string_view s);

/// Biopsy outcome: a Gleason score or a negative examination.
struct Gleason {
  bool negative = false;
  int score = 0;

  static Gleason negative_exam() { return {true, 0}; }
  static Gleason of(int s) { return {false, s}; }
  friend bool operator==(const Gleason&, const Gleason&) = default;
};

enum class Label { NcsPC, CsPC };

std::string_view to_string(Label l) noexcept;
std::optional<Label> parse_label(std::string_view s);

struct PatientRecord {
  std::string patient_id;
  int visit_index = 0;
  std::optional<double> age;        // years
  std::optional<double> psa;        // ng/mL
  std::optional<double> volume_ml;  // mL
  std::optional<double> psad;       // ng/mL^2
  std::optional<int> pirads;
  std::optional<BiopsyType> biopsy_type;
  std::optional<Gleason> gleason;
  std::string volume_path;
  std::string mask_path;
};

/// csPC iff Gleason >= 7; Gleason <= 6 or a negative examination is ncsPC.
Label assign_label(const PatientRecord& r);

/// Drop reason -> count.
using ExclusionReport = std::map<std::string, std::size_t>;

namespace reason {
inline constexpr const char* kNonBaseline = "non-baseline visit";
inline constexpr const char* kMissingDemographic = "missing demographic";
inline constexpr const char* kMissingClinical = "missing clinical";
inline constexpr const char* kMissingAnnotation = "missing annotation";
inline constexpr const char* kFaultyClinical = "faulty clinical";
}  // namespace reason

struct InclusionResult {
  std::vector<PatientRecord> records;
  ExclusionReport excluded;
};

using ImageResolver = std::function<bool(const PatientRecord&)>;

/// Keeps each patient's earliest visit, then drops records with missing or
/// inconsistent fields or an unresolvable image pair. PSAd is derived when
/// absent. The default resolver only requires both paths to be non-empty.
InclusionResult apply_inclusion_criteria(std::span<const PatientRecord> records,
                                         const ImageResolver& resolver = {});

struct SplitAssignment {
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
  std::vector<std::vector<std::string>> folds;
  std::uint64_t seed = 0;
};

/// Seeded Fisher-Yates shuffle; the first floor(fraction * n) ids train.
SplitAssignment split_train_test(std::span<const std::string> ids, double fraction, std::uint64_t seed);

/// k disjoint folds, sizes differing by at most one (larger folds first).
std::vector<std::vector<std::string>> make_cv_folds(std::span<const std::string> train_ids, std::size_t k,
                                                    std::uint64_t seed);

/// Throws PatientLeakage when train and test share an id, InvalidArgument
/// when folds do not partition the training ids.
void validate_split(const SplitAssignment& split);

// Summary tables ------------------------------------------------------------

enum class ContinuousTest { Welch, MannWhitney, Permutation };

struct TableRow {
  std::string characteristic;
  std::string level;               // empty for continuous rows and category headers
  std::vector<std::string> cells;  // one per group; empty for category headers
  std::optional<double> p_value;   // grouped tables only
  std::string test;
};

struct TableSummary {
  std::vector<std::string> groups;
  std::vector<std::size_t> group_sizes;
  std::vector<TableRow> rows;
};

struct TableOptions {
  bool grouped = false;
  ContinuousTest continuous_test = ContinuousTest::Welch;
  std::size_t n_perm = 9999;
  std::uint64_t seed = 0;
};

/// Mean +/- SD for continuous variables and N (%) for categorical ones.
/// `pags` is either empty or parallel to `records`. Grouping is by label
/// (ncsPC first), with a between-group p value per variable.
TableSummary baseline_table(std::span<const PatientRecord> records, std::span<const double> pags,
                            const TableOptions& options = {});

void write_table_csv(const TableSummary& table, const std::filesystem::path& path);

// Cohort CSV ------------------------------------------------------------------

inline constexpr const char* kCohortHeader =
    "patient_id,visit_index,age,psa,volume_ml,psad,pirads,biopsy_type,gleason,volume_path,mask_path";

std::vector<PatientRecord> read_cohort_csv(const std::filesystem::path& path);
void write_cohort_csv(std::span<const PatientRecord> records, const std::filesystem::path& path);

}  // namespace pagkit::cohort
