#include <doctest.h>

#include <cmath>

#include "pagkit/cohort.hpp"
#include "pagkit/error.hpp"
#include "pagkit/gap.hpp"
#include "pagkit/synth.hpp"
#include "pagkit/volume_io.hpp"
#include "test_util.hpp"

using namespace pagkit;
using namespace pagkit::synth;

namespace {

SynthConfig small(std::size_t n, std::uint64_t seed) {
  SynthConfig c;
  c.n_patients = n;
  c.image_size = 48;
  c.slices_min = 3;
  c.slices_max = 4;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("synth: config validation") {
  auto c = small(10, 1);
  CHECK_NOTHROW(c.validate());
  c.cspc_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.noise_sd = -0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.signal_strength = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.age_min = 80.0;
  c.age_max = 50.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("synth: period mapping is invertible") {
  const auto c = small(1, 0);
  for (double age = 45.0; age <= 90.0; age += 5.0) CHECK(c.age_from_period(c.period_px(age)) == doctest::Approx(age));
  CHECK(c.period_px(50.0) > c.period_px(80.0));
}

TEST_CASE("synth: same seed gives a bit-identical cohort; patients are order-free") {
  const auto c = small(6, 42);
  const auto a = generate_cohort(c);
  const auto b = generate_cohort(c);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].volume.voxels == b[i].volume.voxels);
    CHECK(a[i].mask.voxels == b[i].mask.voxels);
    CHECK(a[i].record.age == b[i].record.age);
    CHECK(a[i].record.psa == b[i].record.psa);
  }
  const auto single = generate_patient(c, 4);
  CHECK(single.volume.voxels == a[4].volume.voxels);
  const auto other = generate_patient(small(6, 43), 4);
  CHECK(other.volume.voxels != a[4].volume.voxels);
}

TEST_CASE("synth: apparent age, labels and records are consistent") {
  const auto c = small(40, 7);
  for (const auto& p : generate_cohort(c)) {
    REQUIRE(p.record.age);
    CHECK(*p.record.age >= c.age_min);
    CHECK(*p.record.age <= c.age_max);
    CHECK(cohort::assign_label(p.record) == p.label);
    const double shift = p.label == cohort::Label::CsPC ? c.cspc_age_shift : 0.0;
    CHECK(p.apparent_age == doctest::Approx(*p.record.age + shift));
    CHECK(p.volume.dims[2] >= c.slices_min);
    CHECK(p.mask.dims == p.volume.dims);
    CHECK(p.record.psa);
    CHECK(p.record.volume_ml);
    CHECK(p.record.pirads);
  }
}

TEST_CASE("synth: label balance follows cspc_fraction within binomial noise") {
  auto c = small(600, 11);
  c.image_size = 16;
  c.slices_min = 1;
  c.slices_max = 1;
  std::size_t cspc = 0;
  for (std::size_t i = 0; i < c.n_patients; ++i) cspc += generate_patient(c, i).label == cohort::Label::CsPC;
  const double expected = c.cspc_fraction * 600.0;
  const double sd = std::sqrt(600.0 * c.cspc_fraction * (1.0 - c.cspc_fraction));
  CHECK(std::fabs(static_cast<double>(cspc) - expected) < 4.0 * sd);
}

TEST_CASE("synth: noise-free decoder recovers apparent age within 0.5 years") {
  auto c = small(20, 3);
  c.noise_sd = 0.0;
  double err = 0.0;
  for (const auto& p : generate_cohort(c)) err += std::fabs(decode_apparent_age(c, p.volume, p.mask) - p.apparent_age);
  CHECK(err / 20.0 < 0.5);
}

TEST_CASE("synth: injected shift is recoverable by the decoder") {
  auto c = small(60, 5);
  c.noise_sd = 0.02;
  c.cspc_fraction = 0.5;
  double gap_cs = 0.0;
  double gap_ncs = 0.0;
  std::size_t n_cs = 0;
  std::size_t n_ncs = 0;
  for (const auto& p : generate_cohort(c)) {
    const double g = decode_apparent_age(c, p.volume, p.mask) - *p.record.age;
    if (p.label == cohort::Label::CsPC) {
      gap_cs += g;
      ++n_cs;
    } else {
      gap_ncs += g;
      ++n_ncs;
    }
  }
  REQUIRE(n_cs > 0);
  REQUIRE(n_ncs > 0);
  CHECK(std::fabs(gap_cs / n_cs - gap_ncs / n_ncs - 5.0) < 0.5);
}

TEST_CASE("synth: zero shift gives zero ground-truth gap in both groups") {
  auto c = small(30, 9);
  c.cspc_age_shift = 0.0;
  for (const auto& p : generate_cohort(c)) CHECK(p.apparent_age == *p.record.age);
}

TEST_CASE("synth: written cohort reads back through the cohort and imaging layers") {
  testutil::TempDir dir("synth");
  const auto c = small(5, 13);
  const auto truth = write_cohort(c, dir.path());
  const auto records = cohort::read_cohort_csv(dir / "cohort.csv");
  const auto back = read_ground_truth(dir / "ground_truth.csv");
  REQUIRE(records.size() == 5);
  REQUIRE(back.size() == 5);
  const auto first = generate_patient(c, 0);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[i].patient_id == truth[i].patient_id);
    CHECK(back[i].apparent_age == truth[i].apparent_age);
    CHECK(records[i].patient_id == truth[i].patient_id);
  }
  const auto v = imaging::read_volume(dir / records[0].volume_path);
  CHECK(v.dims == first.volume.dims);
  CHECK(imaging::read_mask(dir / records[0].mask_path).voxels == first.mask.voxels);
}
