#include "pagkit/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/parallel.hpp"
#include "pagkit/random.hpp"
#include "pagkit/volume_io.hpp"

namespace pagkit::synth {

namespace {

constexpr double kTissue = 0.2;
constexpr double kGlandMean = 0.55;
constexpr double kRingAmplitude = 0.35;
constexpr double kDepthRatio = 0.8;  // cranio-caudal semi-axis / in-plane radius
// Superellipsoid taper (r/R)^2 + |z/c|^k <= 1. A flat-ended gland keeps
// every slice's cross-section close to the full radius.
constexpr double kTaper = 8.0;

double draw(const LogNormal& d, Rng& rng) {
  return std::exp(std::normal_distribution<double>(std::log(d.median), d.log_sd)(rng));
}

int draw_category(const std::array<double, 5>& probs, Rng& rng) {
  return 1 + static_cast<int>(std::discrete_distribution<int>(probs.begin(), probs.end())(rng));
}

std::string patient_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "SYN%04zu", index + 1);
  return buf;
}

double signal(AgeSignal kind, double dx, double dy, double period) {
  const double w = 2.0 * std::numbers::pi / period;
  if (kind == AgeSignal::RingWidth) return std::cos(w * std::hypot(dx, dy));
  return std::cos(w * dx) * std::cos(w * dy);
}

struct GlandVoxel {
  double dx = 0.0;
  double dy = 0.0;
  double value = 0.0;
};

/// Residual sum of squares of the best phase-free fit at one period.
double fit_rss(AgeSignal kind, const std::vector<GlandVoxel>& voxels, double period) {
  const double w = 2.0 * std::numbers::pi / period;
  const int k = kind == AgeSignal::RingWidth ? 3 : 5;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  double yy = 0.0;
  Eigen::VectorXd b(k);
  for (const auto& v : voxels) {
    b(0) = 1.0;
    if (kind == AgeSignal::RingWidth) {
      const double r = std::hypot(v.dx, v.dy);
      b(1) = std::cos(w * r);
      b(2) = std::sin(w * r);
    } else {
      const double cx = std::cos(w * v.dx), sx = std::sin(w * v.dx);
      const double cy = std::cos(w * v.dy), sy = std::sin(w * v.dy);
      b(1) = cx * cy;
      b(2) = cx * sy;
      b(3) = sx * cy;
      b(4) = sx * sy;
    }
    gram.noalias() += b * b.transpose();
    rhs += v.value * b;
    yy += v.value * v.value;
  }
  const Eigen::VectorXd coef = gram.ldlt().solve(rhs);
  return yy - coef.dot(rhs);
}

}  // namespace

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, "synth: " + what); };
  if (n_patients < 1) bad("n_patients must be positive");
  if (!(age_min <= age_max)) bad("age_min must not exceed age_max");
  if (slices_min < 1 || slices_min > slices_max) bad("slice range must satisfy 1 <= min <= max");
  if (image_size < 8) bad("image_size must be at least 8");
  if (!(gland_fraction > 0.0 && gland_fraction < 0.5)) bad("gland_fraction must lie in (0, 0.5)");
  if (!(cspc_fraction >= 0.0 && cspc_fraction <= 1.0)) bad("cspc_fraction must lie in [0, 1]");
  if (!(signal_strength >= 0.0)) bad("signal_strength must be non-negative");
  if (!(noise_sd >= 0.0)) bad("noise_sd must be non-negative");
  if (!std::isfinite(cspc_age_shift)) bad("cspc_age_shift must be finite");
  const double youngest = age_min + std::min(0.0, cspc_age_shift);
  const double oldest = age_max + std::max(0.0, cspc_age_shift);
  if (period_px(oldest) < 2.0 || period_px(youngest) < 2.0) {
    bad("signal period falls below 2 pixels inside the age range");
  }
  const auto check_probs = [&](const std::array<double, 5>& p) {
    double total = 0.0;
    for (double x : p) {
      if (!(x >= 0.0)) bad("PI-RADS probabilities must be non-negative");
      total += x;
    }
    if (!(total > 0.0)) bad("PI-RADS probabilities must not all be zero");
  };
  check_probs(covariates.pirads_ncspc);
  check_probs(covariates.pirads_cspc);
  for (const auto* d : {&covariates.psa_ncspc, &covariates.psa_cspc, &covariates.volume_ncspc,
                        &covariates.volume_cspc}) {
    if (!(d->median > 0.0) || !(d->log_sd >= 0.0)) bad("log-normal covariates need median > 0 and log_sd >= 0");
  }
  if (!(covariates.negative_biopsy_fraction >= 0.0 && covariates.negative_biopsy_fraction <= 1.0)) {
    bad("negative_biopsy_fraction must lie in [0, 1]");
  }
}

double SynthConfig::period_px(double apparent_age) const {
  return gland_radius_px() * (period_at_reference - period_per_year * (apparent_age - reference_age));
}

double SynthConfig::age_from_period(double period) const {
  return reference_age + (period_at_reference - period / gland_radius_px()) / period_per_year;
}

SynthPatient generate_patient(const SynthConfig& cfg, std::size_t index) {
  const std::uint64_t patient_seed = derive_seed(cfg.seed, index);
  Rng rng = make_rng(patient_seed, 0);
  Rng noise_rng = make_rng(patient_seed, 1);
  const auto& cov = cfg.covariates;

  SynthPatient p;
  p.label = uniform01(rng) < cfg.cspc_fraction ? cohort::Label::CsPC : cohort::Label::NcsPC;
  const bool cspc = p.label == cohort::Label::CsPC;
  const double age = cfg.age_min + (cfg.age_max - cfg.age_min) * uniform01(rng);
  p.apparent_age = age + (cspc ? cfg.cspc_age_shift : 0.0);

  auto& r = p.record;
  r.patient_id = patient_id(index);
  r.visit_index = 0;
  r.age = age;
  r.psa = draw(cspc ? cov.psa_cspc : cov.psa_ncspc, rng);
  r.volume_ml = draw(cspc ? cov.volume_cspc : cov.volume_ncspc, rng);
  r.psad = *r.psa / *r.volume_ml;
  r.pirads = draw_category(cspc ? cov.pirads_cspc : cov.pirads_ncspc, rng);
  r.biopsy_type = static_cast<cohort::BiopsyType>(uniform_index(rng, 3));
  if (cspc) {
    const double u = uniform01(rng);
    r.gleason = cohort::Gleason::of(u < 0.6 ? 7 : (u < 0.85 ? 8 : 9));
  } else {
    r.gleason = uniform01(rng) < cov.negative_biopsy_fraction ? cohort::Gleason::negative_exam()
                                                               : cohort::Gleason::of(6);
  }

  // Flat-ended gland of the drawn volume; the in-plane radius is fixed in
  // pixels, so the pixel spacing carries the physical size.
  // volume = 2 pi R^2 c k / (k + 1)
  const double radius_mm =
      std::cbrt(1000.0 * *r.volume_ml * (kTaper + 1.0) / (2.0 * std::numbers::pi * kDepthRatio * kTaper));
  const double depth_mm = kDepthRatio * radius_mm;
  const double radius_px = cfg.gland_radius_px();
  const std::size_t n_slices = cfg.slices_min + uniform_index(rng, cfg.slices_max - cfg.slices_min + 1);
  const std::size_t nz = n_slices + 2;
  const std::size_t n = cfg.image_size;
  const double dz = 2.0 * depth_mm / static_cast<double>(n_slices);
  const double pixel_mm = radius_mm / radius_px;
  const double jitter = 0.1 * static_cast<double>(n);
  const double cx = 0.5 * static_cast<double>(n - 1) + jitter * (2.0 * uniform01(rng) - 1.0);
  const double cy = 0.5 * static_cast<double>(n - 1) + jitter * (2.0 * uniform01(rng) - 1.0);
  const double period = cfg.period_px(p.apparent_age);

  const imaging::Dims dims{n, n, nz};
  std::vector<double> vox(n * n * nz);
  std::vector<std::uint8_t> mvox(vox.size(), 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t z = 0; z < nz; ++z) {
    const double zmm = (static_cast<double>(z) - 0.5 * static_cast<double>(nz - 1)) * dz;
    const double ztaper = std::pow(std::abs(zmm / depth_mm), kTaper);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double rr = (dx * dx + dy * dy) / (radius_px * radius_px);
        const bool inside = rr + ztaper <= 1.0;
        double value = kTissue;
        if (inside) value = kGlandMean + kRingAmplitude * cfg.signal_strength * signal(cfg.age_signal, dx, dy, period);
        const double eps = noise(noise_rng);  // drawn for every voxel so the stream stays aligned
        value += cfg.noise_sd * eps;
        const std::size_t i = x + n * (y + n * z);
        vox[i] = static_cast<double>(static_cast<float>(value));
        mvox[i] = inside ? 1 : 0;
      }
    }
  }
  p.volume = imaging::Volume(dims, {pixel_mm, pixel_mm, dz}, std::move(vox), r.patient_id);
  p.volume.stored_type = imaging::VoxelType::Float32;
  p.mask = imaging::Mask(dims, std::move(mvox));
  return p;
}

std::vector<SynthPatient> generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthPatient> out;
  out.reserve(cfg.n_patients);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) out.push_back(generate_patient(cfg, i));
  return out;
}

std::vector<GroundTruth> write_cohort(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                      std::size_t threads) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");
  std::vector<cohort::PatientRecord> records(cfg.n_patients);
  std::vector<GroundTruth> truth(cfg.n_patients);
  parallel_for(cfg.n_patients, threads, [&](std::size_t i) {
    SynthPatient p = generate_patient(cfg, i);
    const std::string id = p.record.patient_id;
    p.record.volume_path = "images/" + id + ".json";
    p.record.mask_path = "masks/" + id + ".json";
    imaging::write_fixture(p.volume, out_dir / p.record.volume_path);
    imaging::Volume mask_vol(p.mask.dims, p.volume.spacing,
                             std::vector<double>(p.mask.voxels.begin(), p.mask.voxels.end()), id);
    mask_vol.stored_type = imaging::VoxelType::UInt8;
    imaging::write_fixture(mask_vol, out_dir / p.record.mask_path);
    truth[i] = {id, p.label, *p.record.age, p.apparent_age};
    records[i] = std::move(p.record);
  });
  cohort::write_cohort_csv(records, out_dir / "cohort.csv");
  std::string text = std::string(kGroundTruthHeader) + "\n";
  for (const auto& t : truth) {
    text += t.patient_id + ',' + std::string(cohort::to_string(t.label)) + ',' +
            csv::format_number(t.chronological_age) + ',' + csv::format_number(t.apparent_age) + '\n';
  }
  csv::write_text(out_dir / "ground_truth.csv", text);
  return truth;
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  const auto table = csv::read(path, kGroundTruthHeader);
  std::vector<GroundTruth> out;
  for (const auto& row : table.rows) {
    GroundTruth t;
    t.patient_id = row[0];
    const auto label = cohort::parse_label(row[1]);
    if (!label) fail(ErrorCode::ParseError, path.string() + ": bad label '" + row[1] + "'");
    t.label = *label;
    t.chronological_age = *csv::parse_optional_double(row[2], "chronological_age");
    t.apparent_age = *csv::parse_optional_double(row[3], "apparent_age");
    out.push_back(t);
  }
  return out;
}

double decode_apparent_age(const SynthConfig& cfg, const imaging::Volume& v, const imaging::Mask& m) {
  if (v.dims != m.dims) fail(ErrorCode::DimensionMismatch, "volume and mask grids differ");
  double sx = 0.0;
  double sy = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z < v.nz(); ++z) {
    for (std::size_t y = 0; y < v.ny(); ++y) {
      for (std::size_t x = 0; x < v.nx(); ++x) {
        if (!m.at(x, y, z)) continue;
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        ++count;
      }
    }
  }
  if (count == 0) fail(ErrorCode::EmptyMask, "decoder needs a nonempty gland mask");
  const double cx = sx / static_cast<double>(count);
  const double cy = sy / static_cast<double>(count);
  std::vector<GlandVoxel> voxels;
  voxels.reserve(count);
  for (std::size_t z = 0; z < v.nz(); ++z) {
    for (std::size_t y = 0; y < v.ny(); ++y) {
      for (std::size_t x = 0; x < v.nx(); ++x) {
        if (m.at(x, y, z)) voxels.push_back({static_cast<double>(x) - cx, static_cast<double>(y) - cy, v.at(x, y, z)});
      }
    }
  }

  // search in age units so the grid step has a fixed meaning
  const double lo = cfg.age_min + std::min(0.0, cfg.cspc_age_shift) - 10.0;
  const double hi = cfg.age_max + std::max(0.0, cfg.cspc_age_shift) + 10.0;
  auto rss_at = [&](double age) {
    const double period = cfg.period_px(age);
    return period > 1.0 ? fit_rss(cfg.age_signal, voxels, period) : std::numeric_limits<double>::infinity();
  };
  constexpr double step = 0.25;
  double best_age = lo;
  double best = std::numeric_limits<double>::infinity();
  for (double a = lo; a <= hi + 1e-9; a += step) {
    const double r = rss_at(a);
    if (r < best) {
      best = r;
      best_age = a;
    }
  }
  // golden-section refinement inside the winning grid cell
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = best_age - step;
  double b = best_age + step;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = rss_at(c);
  double fd = rss_at(d);
  for (int it = 0; it < 40; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = rss_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = rss_at(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace pagkit::synth
