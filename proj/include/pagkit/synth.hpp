#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pagkit/cohort.hpp"
#include "pagkit/imaging.hpp"

namespace pagkit::synth {

enum class AgeSignal {
  RingWidth,        // concentric rings around the gland centre
  TextureFrequency  // checkerboard-like cos(x) cos(y) texture
};

/// Log-normal draw: exp(N(log(median), log_sd)).
struct LogNormal {
  double median = 1.0;
  double log_sd = 0.0;
};

struct CovariateModel {
  LogNormal psa_ncspc{6.0, 0.5};
  LogNormal psa_cspc{8.5, 0.5};
  LogNormal volume_ncspc{55.0, 0.35};
  LogNormal volume_cspc{42.0, 0.35};
  std::array<double, 5> pirads_ncspc{0.10, 0.35, 0.25, 0.20, 0.10};  // P(PI-RADS = 1..5)
  std::array<double, 5> pirads_cspc{0.02, 0.08, 0.15, 0.40, 0.35};
  double negative_biopsy_fraction = 0.6;  // share of ncsPC with a negative exam rather than Gleason 6
};

struct SynthConfig {
  std::size_t n_patients = 240;
  double age_min = 50.0;
  double age_max = 80.0;
  std::size_t slices_min = 6;
  std::size_t slices_max = 8;
  std::size_t image_size = 64;
  double gland_fraction = 0.3;  // in-plane gland radius / image size
  AgeSignal age_signal = AgeSignal::RingWidth;
  double signal_strength = 1.0;
  double cspc_fraction = 0.3;
  double cspc_age_shift = 5.0;  // years added to the apparent age of csPC patients
  double noise_sd = 0.02;
  /// Signal period as a fraction of the gland radius:
  /// period_at_reference - period_per_year * (apparent_age - reference_age).
  double reference_age = 40.0;
  double period_at_reference = 0.5;
  double period_per_year = 0.005;
  CovariateModel covariates;
  std::uint64_t seed = 0;

  void validate() const;

  double gland_radius_px() const { return gland_fraction * static_cast<double>(image_size); }
  /// Signal period in pixels for a given apparent age.
  double period_px(double apparent_age) const;
  /// Inverse of period_px.
  double age_from_period(double period_px) const;
};

struct SynthPatient {
  cohort::PatientRecord record;
  cohort::Label label = cohort::Label::NcsPC;
  double apparent_age = 0.0;
  imaging::Volume volume;
  imaging::Mask mask;
};

/// Deterministic in (cfg, index); patient i draws from streams derived from
/// (seed, i) only, so patients can be generated in any order.
SynthPatient generate_patient(const SynthConfig& cfg, std::size_t index);
std::vector<SynthPatient> generate_cohort(const SynthConfig& cfg);

struct GroundTruth {
  std::string patient_id;
  cohort::Label label = cohort::Label::NcsPC;
  double chronological_age = 0.0;
  double apparent_age = 0.0;
};

/// Writes <out>/cohort.csv, <out>/ground_truth.csv and fixture pairs under
/// <out>/images and <out>/masks. Image paths in the CSV are relative to <out>.
std::vector<GroundTruth> write_cohort(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                      std::size_t threads = 1);

inline constexpr const char* kGroundTruthHeader = "patient_id,label,chronological_age,apparent_age";
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

/// Closed-form decoder: least-squares fit of the signal period over gland
/// voxels (grid search plus golden-section refinement), mapped back to age.
double decode_apparent_age(const SynthConfig& cfg, const imaging::Volume& v, const imaging::Mask& m);

}  // namespace pagkit::synth
