#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pagkit/cohort.hpp"

namespace pagkit::gap {

/// Predicted minus chronological age; positive means the model sees the
/// patient as older than they are.
double compute_pag(double predicted_age, double chronological_age);

/// Arithmetic mean of a patient's per-slice gaps.
double pag_per_patient(std::span<const double> slice_pags);

struct PagResult {
  std::string patient_id;
  double predicted_age = 0.0;
  double chronological_age = 0.0;
  double pag = 0.0;
  std::size_t n_slices = 0;
};

PagResult make_pag_result(std::string patient_id, std::span<const double> slice_predictions,
                          double chronological_age);

/// One line of the analysis-ready PAG table.
struct AnalysisRow {
  std::string patient_id;
  double chronological_age = 0.0;
  double predicted_age = 0.0;
  double pag = 0.0;
  std::size_t n_slices = 0;
  cohort::Label label = cohort::Label::NcsPC;
  std::optional<double> psa;
  std::optional<double> volume_ml;
  std::optional<double> psad;
  std::optional<int> pirads;
};

AnalysisRow make_analysis_row(const PagResult& pag, const cohort::PatientRecord& record);

inline constexpr const char* kPagHeader =
    "patient_id,chronological_age,predicted_age,pag,n_slices,label,psa,volume_ml,psad,pirads";

void write_pag_csv(std::span<const AnalysisRow> rows, const std::filesystem::path& path);
std::vector<AnalysisRow> read_pag_csv(const std::filesystem::path& path);

}  // namespace pagkit::gap
