#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "pagkit/error.hpp"
#include "pagkit/imaging.hpp"
#include "pagkit/volume_io.hpp"
#include "test_util.hpp"

using namespace pagkit;
using namespace pagkit::imaging;

namespace {

template <typename T>
void put(std::vector<char>& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

// Hand-assembled single-file NIfTI-1 in the canonical layout the writer emits.
std::vector<char> nifti_bytes(std::int16_t nx, std::int16_t ny, std::int16_t nz, std::int16_t datatype,
                              const std::vector<float>& payload, const char* magic = "n+1") {
  std::vector<char> b(352, 0);
  put<std::int32_t>(b, 0, 348);
  const std::int16_t dim[8] = {3, nx, ny, nz, 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) put(b, 40 + 2 * i, dim[i]);
  put<std::int16_t>(b, 70, datatype);
  put<std::int16_t>(b, 72, datatype == 4 ? 16 : 32);
  const float pixdim[8] = {1.0f, 0.5f, 0.5f, 3.0f, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 8; ++i) put(b, 76 + 4 * i, pixdim[i]);
  put<float>(b, 108, 352.0f);
  put<float>(b, 112, 1.0f);
  put<float>(b, 116, 0.0f);
  b[123] = 2;
  std::memcpy(b.data() + 344, magic, 4);
  for (float f : payload) {
    char raw[4];
    std::memcpy(raw, &f, 4);
    b.insert(b.end(), raw, raw + 4);
  }
  return b;
}

std::vector<float> ramp(std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.25f * static_cast<float>(i) - 3.0f;
  return v;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

Mask point_mask(Dims d, std::vector<std::array<std::size_t, 3>> pts) {
  Mask m(d, std::vector<std::uint8_t>(d[0] * d[1] * d[2], 0));
  for (auto [x, y, z] : pts) m.voxels[m.index(x, y, z)] = 1;
  return m;
}

}  // namespace

TEST_CASE("nifti: 4x4x2 float32 fixture decodes to 32 voxels") {
  testutil::TempDir dir("nifti");
  const auto payload = ramp(32);
  testutil::write_bytes(dir / "a.nii", nifti_bytes(4, 4, 2, 16, payload));
  const auto v = read_nifti(dir / "a.nii");
  CHECK(v.dims == Dims{4, 4, 2});
  REQUIRE(v.voxels.size() == 32);
  for (std::size_t i = 0; i < 32; ++i) CHECK(v.voxels[i] == payload[i]);
  CHECK(v.spacing == Spacing{0.5, 0.5, 3.0});
}

TEST_CASE("nifti: write(read(f)) is byte-identical to a hand-assembled file") {
  testutil::TempDir dir("nifti");
  const auto original = nifti_bytes(4, 4, 2, 16, ramp(32));
  testutil::write_bytes(dir / "a.nii", original);
  write_nifti(read_nifti(dir / "a.nii"), dir / "b.nii");
  CHECK(testutil::read_bytes(dir / "b.nii") == original);
}

TEST_CASE("nifti: int16 payload round-trips") {
  testutil::TempDir dir("nifti");
  Volume v({3, 2, 2}, {1, 1, 2}, {-7, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 32000});
  v.stored_type = VoxelType::Int16;
  write_nifti(v, dir / "i.nii");
  const auto back = read_nifti(dir / "i.nii");
  CHECK(back.voxels == v.voxels);
  CHECK(back.stored_type == VoxelType::Int16);
  write_nifti(back, dir / "j.nii");
  CHECK(testutil::read_bytes(dir / "i.nii") == testutil::read_bytes(dir / "j.nii"));
}

TEST_CASE("nifti: malformed files raise their named errors") {
  testutil::TempDir dir("nifti");
  testutil::write_bytes(dir / "magic.nii", nifti_bytes(4, 4, 2, 16, ramp(32), "XXX"));
  CHECK(code_of([&] { read_nifti(dir / "magic.nii"); }) == ErrorCode::BadMagic);

  testutil::write_bytes(dir / "dtype.nii", nifti_bytes(4, 4, 2, 64, ramp(32)));
  CHECK(code_of([&] { read_nifti(dir / "dtype.nii"); }) == ErrorCode::UnsupportedDatatype);

  auto cut = nifti_bytes(4, 4, 2, 16, ramp(32));
  cut.resize(cut.size() - 5);
  testutil::write_bytes(dir / "trunc.nii", cut);
  CHECK(code_of([&] { read_nifti(dir / "trunc.nii"); }) == ErrorCode::TruncatedFile);

  testutil::write_bytes(dir / "short.nii", std::vector<char>(100, 0));
  CHECK(code_of([&] { read_nifti(dir / "short.nii"); }) == ErrorCode::TruncatedFile);
}

TEST_CASE("fixture: json/raw pair round-trips and dispatches by extension") {
  testutil::TempDir dir("fixture");
  Volume v({2, 3, 2}, {0.7, 0.7, 3.0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11.5}, "P1");
  write_volume(v, dir / "p1.json");
  const auto back = read_volume(dir / "p1.raw");
  CHECK(back.dims == v.dims);
  CHECK(back.voxels == v.voxels);
  CHECK(back.patient_id == "P1");
}

TEST_CASE("normalize: minmax maps {2,4,6} to {0,0.5,1}") {
  const Volume v({3, 1, 1}, {1, 1, 1}, {2, 4, 6});
  CHECK(normalize_intensity(v, NormalizeMethod::minmax()).voxels == std::vector<double>{0.0, 0.5, 1.0});
}

TEST_CASE("normalize: constant volume is rejected") {
  const Volume v({2, 2, 1}, {1, 1, 1}, {5, 5, 5, 5});
  CHECK(code_of([&] { normalize_intensity(v, NormalizeMethod::minmax()); }) == ErrorCode::ConstantVolume);
  CHECK(code_of([&] { normalize_intensity(v, NormalizeMethod{}); }) == ErrorCode::ConstantVolume);
}

TEST_CASE("normalize: percentile_clip(1, 99) matches a sort-based oracle") {
  std::mt19937_64 rng(11);
  std::lognormal_distribution<double> dist(0.0, 1.0);
  std::vector<double> x(10000);
  for (auto& e : x) e = dist(rng);
  const Volume v({100, 100, 1}, {1, 1, 1}, x);
  NormalizeParams applied;
  const auto out = normalize_intensity(v, NormalizeMethod::percentile_clip(1, 99), &applied);

  auto sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const auto pct = [&](const std::vector<double>& s, double p) {
    const double rank = p / 100.0 * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (rank - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double lo = pct(sorted, 1.0);
  const double hi = pct(sorted, 99.0);
  CHECK(applied.lower == doctest::Approx(lo).epsilon(1e-12));
  CHECK(applied.upper == doctest::Approx(hi).epsilon(1e-12));

  auto out_sorted = out.voxels;
  std::sort(out_sorted.begin(), out_sorted.end());
  // strictly inside the clip range, where no clamped value enters the interpolation
  for (double p : {1.5, 5.0, 25.0, 50.0, 75.0, 95.0, 98.5}) {
    const double expected = (pct(sorted, p) - lo) / (hi - lo);
    CHECK(std::fabs(pct(out_sorted, p) - expected) < 1e-9);
  }
  CHECK(out_sorted.front() == 0.0);
  CHECK(out_sorted.back() == 1.0);
}

TEST_CASE("normalize: output is monotone in the input") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(100.0, 30.0);
  std::vector<double> x(2000);
  for (auto& e : x) e = dist(rng);
  const Volume v({2000, 1, 1}, {1, 1, 1}, x);
  for (const auto& method : {NormalizeMethod::minmax(), NormalizeMethod::percentile_clip(2, 98)}) {
    const auto out = normalize_intensity(v, method);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(out.voxels[i] >= 0.0);
      CHECK(out.voxels[i] <= 1.0);
      for (std::size_t j = i + 1; j < std::min(x.size(), i + 5); ++j) {
        if (x[i] <= x[j]) CHECK(out.voxels[i] <= out.voxels[j]);
      }
    }
  }
}

TEST_CASE("bounding box: point, union across slices, empty") {
  CHECK(gland_bounding_box(point_mask({32, 32, 3}, {{10, 20, 1}})) == Box2D{10, 10, 20, 20});

  Mask m({128, 8, 6}, std::vector<std::uint8_t>(128 * 8 * 6, 0));
  for (std::size_t x = 50; x <= 79; ++x) m.voxels[m.index(x, 3, 0)] = 1;
  for (std::size_t x = 60; x <= 90; ++x) m.voxels[m.index(x, 4, 5)] = 1;
  const auto box = gland_bounding_box(m);
  CHECK(box.x_min == 50);
  CHECK(box.x_max == 90);
  CHECK(box.y_min == 3);
  CHECK(box.y_max == 4);

  CHECK(code_of([] { gland_bounding_box(point_mask({4, 4, 2}, {})); }) == ErrorCode::EmptyMask);
}

TEST_CASE("crop: margin expansion and clamping") {
  CHECK(expand_and_clamp({50, 79, 60, 99}, 40, 256, 256) == Box2D{10, 119, 20, 139});
  CHECK(expand_and_clamp({5, 20, 100, 120}, 40, 256, 256).x_min == 0);
  CHECK(expand_and_clamp({200, 250, 100, 120}, 40, 256, 256).x_max == 255);
  CHECK(expand_and_clamp({50, 79, 60, 99}, 0, 256, 256) == Box2D{50, 79, 60, 99});
}

TEST_CASE("crop: margin 0 yields the tight box and keeps voxel values") {
  Volume v({6, 5, 2}, {1, 1, 1}, std::vector<double>(60));
  for (std::size_t i = 0; i < 60; ++i) v.voxels[i] = static_cast<double>(i);
  const auto m = point_mask({6, 5, 2}, {{1, 2, 0}, {3, 3, 1}});
  const auto c = crop_to_gland(v, m, 0);
  CHECK(c.dims == Dims{3, 2, 2});
  CHECK(c.at(0, 0, 0) == v.at(1, 2, 0));
  CHECK(c.at(2, 1, 1) == v.at(3, 3, 1));
}

TEST_CASE("slices: one sample per mask-bearing slice") {
  Volume v({8, 8, 20}, {1, 1, 1}, std::vector<double>(8 * 8 * 20, 0.5));
  std::vector<std::array<std::size_t, 3>> pts;
  for (std::size_t z = 4; z <= 18; ++z) pts.push_back({3, 3, z});
  const auto m = point_mask({8, 8, 20}, pts);
  const auto s = extract_slices(v, m, 63.0, 16);
  REQUIRE(s.size() == 15);
  CHECK(s.front().slice_index == 4);
  CHECK(s.back().slice_index == 18);
  CHECK(s.front().target_age == 63.0);
  CHECK(extract_slices(v, m, 63.0, 16, SliceRule::AllSlices).size() == 20);
}

TEST_CASE("slices: 110x120 slice resized to 128x128 stays in [0,1]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Volume v({110, 120, 1}, {1, 1, 1}, std::vector<double>(110 * 120));
  for (auto& x : v.voxels) x = u(rng);
  const auto m = point_mask({110, 120, 1}, {{50, 50, 0}});
  const auto s = extract_slices(v, m, 60.0, 128);
  REQUIRE(s.size() == 1);
  CHECK(s[0].side == 128);
  CHECK(s[0].pixels.size() == 128 * 128);
  CHECK(*std::min_element(s[0].pixels.begin(), s[0].pixels.end()) >= 0.0);
  CHECK(*std::max_element(s[0].pixels.begin(), s[0].pixels.end()) <= 1.0);
}

TEST_CASE("resize: constant image stays constant") {
  const std::vector<double> src(7 * 9, 0.375);
  for (auto [w, h] : {std::pair{16, 16}, {3, 5}, {7, 9}, {128, 128}}) {
    const auto out = resize_bilinear(src, 7, 9, static_cast<std::size_t>(w), static_cast<std::size_t>(h));
    CHECK(out.size() == static_cast<std::size_t>(w * h));
    for (double x : out) CHECK(x == doctest::Approx(0.375).epsilon(1e-15));
  }
}

TEST_CASE("resize: same size is the identity") {
  std::vector<double> src(12 * 12);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = std::sin(static_cast<double>(i));
  const auto out = resize_bilinear(src, 12, 12, 12, 12);
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(out[i] == doctest::Approx(src[i]).epsilon(1e-14));
}
