#include "pagkit/gap.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"

namespace pagkit::gap {

double compute_pag(double predicted_age, double chronological_age) {
  if (!std::isfinite(predicted_age) || !std::isfinite(chronological_age)) {
    fail(ErrorCode::InvalidArgument, "age gap needs finite ages");
  }
  return predicted_age - chronological_age;
}

double pag_per_patient(std::span<const double> slice_pags) {
  if (slice_pags.empty()) fail(ErrorCode::EmptySliceList, "no slice gaps to average");
  return std::accumulate(slice_pags.begin(), slice_pags.end(), 0.0) / static_cast<double>(slice_pags.size());
}

PagResult make_pag_result(std::string patient_id, std::span<const double> slice_predictions,
                          double chronological_age) {
  if (slice_predictions.empty()) fail(ErrorCode::EmptySliceList, "patient " + patient_id + " has no slices");
  PagResult r;
  r.patient_id = std::move(patient_id);
  r.predicted_age = std::accumulate(slice_predictions.begin(), slice_predictions.end(), 0.0) /
                    static_cast<double>(slice_predictions.size());
  r.chronological_age = chronological_age;
  r.pag = compute_pag(r.predicted_age, chronological_age);
  r.n_slices = slice_predictions.size();
  return r;
}

AnalysisRow make_analysis_row(const PagResult& pag, const cohort::PatientRecord& record) {
  AnalysisRow row;
  row.patient_id = pag.patient_id;
  row.chronological_age = pag.chronological_age;
  row.predicted_age = pag.predicted_age;
  row.pag = pag.pag;
  row.n_slices = pag.n_slices;
  row.label = cohort::assign_label(record);
  row.psa = record.psa;
  row.volume_ml = record.volume_ml;
  row.psad = record.psad;
  row.pirads = record.pirads;
  return row;
}

void write_pag_csv(std::span<const AnalysisRow> rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kPagHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.patient_id << ',' << csv::format_number(r.chronological_age) << ','
        << csv::format_number(r.predicted_age) << ',' << csv::format_number(r.pag) << ',' << r.n_slices << ','
        << cohort::to_string(r.label) << ',' << opt(r.psa) << ',' << opt(r.volume_ml) << ',' << opt(r.psad) << ','
        << (r.pirads ? std::to_string(*r.pirads) : "") << '\n';
  }
  csv::write_text(path, out.str());
}

std::vector<AnalysisRow> read_pag_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, std::string_view(kPagHeader));
  std::vector<AnalysisRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& f : t.rows) {
    AnalysisRow r;
    r.patient_id = f[0];
    auto required = [&](std::size_t i, const char* what) {
      auto v = csv::parse_optional_double(f[i], what);
      if (!v) fail(ErrorCode::ParseError, path.string() + ": missing " + what + " for " + r.patient_id);
      return *v;
    };
    r.chronological_age = required(1, "chronological_age");
    r.predicted_age = required(2, "predicted_age");
    r.pag = required(3, "pag");
    r.n_slices = static_cast<std::size_t>(required(4, "n_slices"));
    const auto label = cohort::parse_label(f[5]);
    if (!label) fail(ErrorCode::ParseError, path.string() + ": bad label '" + f[5] + "'");
    r.label = *label;
    r.psa = csv::parse_optional_double(f[6], "psa");
    r.volume_ml = csv::parse_optional_double(f[7], "volume_ml");
    r.psad = csv::parse_optional_double(f[8], "psad");
    r.pirads = csv::parse_optional_int(f[9], "pirads");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace pagkit::gap
