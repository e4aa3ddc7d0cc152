#include "pagkit/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pagkit/error.hpp"
#include "pagkit/stats/descriptive.hpp"

namespace pagkit::imaging {

namespace {

std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

std::string dims_str(const Dims& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

}  // namespace

Volume::Volume(Dims d, Spacing s, std::vector<double> v, std::string id)
    : dims(d), spacing(s), voxels(std::move(v)), patient_id(std::move(id)) {
  validate();
}

void Volume::validate() const {
  for (auto n : dims) {
    if (n < 1) fail(ErrorCode::InvalidArgument, "volume dims must be >= 1, got " + dims_str(dims));
  }
  for (auto s : spacing) {
    if (!(s > 0.0)) fail(ErrorCode::InvalidArgument, "volume spacing must be > 0");
  }
  if (voxels.size() != voxel_count(dims)) {
    fail(ErrorCode::DimensionMismatch, "voxel count " + std::to_string(voxels.size()) +
                                           " does not match dims " + dims_str(dims));
  }
}

Mask::Mask(Dims d, std::vector<std::uint8_t> v) : dims(d), voxels(std::move(v)) {
  if (voxels.size() != voxel_count(dims)) {
    fail(ErrorCode::DimensionMismatch, "mask voxel count does not match dims " + dims_str(dims));
  }
  for (auto& x : voxels) x = x != 0 ? 1 : 0;
}

Mask Mask::from_volume(const Volume& v) {
  std::vector<std::uint8_t> bits(v.voxels.size());
  std::transform(v.voxels.begin(), v.voxels.end(), bits.begin(),
                 [](double x) { return static_cast<std::uint8_t>(x != 0.0); });
  return Mask(v.dims, std::move(bits));
}

bool Mask::slice_nonempty(std::size_t z) const {
  const std::size_t plane = dims[0] * dims[1];
  const auto first = voxels.begin() + static_cast<std::ptrdiff_t>(z * plane);
  return std::any_of(first, first + static_cast<std::ptrdiff_t>(plane), [](std::uint8_t b) { return b != 0; });
}

Volume normalize_intensity(const Volume& v, const NormalizeMethod& method, NormalizeParams* applied) {
  if (v.voxels.empty()) fail(ErrorCode::InvalidArgument, "cannot normalize an empty volume");
  const auto [mn, mx] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  if (*mn == *mx) fail(ErrorCode::ConstantVolume, "all voxels equal " + std::to_string(*mn));

  double lower = *mn;
  double upper = *mx;
  if (method.kind == NormalizeMethod::Kind::PercentileClip) {
    if (!(method.p_lo >= 0.0 && method.p_lo < method.p_hi && method.p_hi <= 100.0)) {
      fail(ErrorCode::InvalidArgument, "percentile bounds must satisfy 0 <= lo < hi <= 100");
    }
    lower = stats::percentile(v.voxels, method.p_lo);
    upper = stats::percentile(v.voxels, method.p_hi);
    if (!(upper > lower)) {
      fail(ErrorCode::ConstantVolume, "clip percentiles coincide; intensity range collapses");
    }
  }

  Volume out = v;
  const double range = upper - lower;
  for (auto& x : out.voxels) {
    x = (std::clamp(x, lower, upper) - lower) / range;
  }
  out.stored_type = VoxelType::Float32;
  if (applied) *applied = {lower, upper};
  return out;
}

Box2D gland_bounding_box(const Mask& m) {
  std::int64_t x_min = std::numeric_limits<std::int64_t>::max();
  std::int64_t y_min = x_min;
  std::int64_t x_max = -1;
  std::int64_t y_max = -1;
  for (std::size_t z = 0; z < m.dims[2]; ++z) {
    for (std::size_t y = 0; y < m.dims[1]; ++y) {
      for (std::size_t x = 0; x < m.dims[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        const auto xi = static_cast<std::int64_t>(x);
        const auto yi = static_cast<std::int64_t>(y);
        x_min = std::min(x_min, xi);
        x_max = std::max(x_max, xi);
        y_min = std::min(y_min, yi);
        y_max = std::max(y_max, yi);
      }
    }
  }
  if (x_max < 0) fail(ErrorCode::EmptyMask, "mask has no nonzero voxel");
  return {x_min, x_max, y_min, y_max};
}

Box2D expand_and_clamp(const Box2D& box, std::int64_t margin, std::size_t nx, std::size_t ny) {
  if (margin < 0) fail(ErrorCode::InvalidArgument, "crop margin must be >= 0");
  const auto last_x = static_cast<std::int64_t>(nx) - 1;
  const auto last_y = static_cast<std::int64_t>(ny) - 1;
  return {std::max<std::int64_t>(0, box.x_min - margin), std::min(last_x, box.x_max + margin),
          std::max<std::int64_t>(0, box.y_min - margin), std::min(last_y, box.y_max + margin)};
}

Volume crop(const Volume& v, const Box2D& box) {
  if (box.x_min < 0 || box.y_min < 0 || box.x_max >= static_cast<std::int64_t>(v.nx()) ||
      box.y_max >= static_cast<std::int64_t>(v.ny()) || box.x_min > box.x_max || box.y_min > box.y_max) {
    fail(ErrorCode::InvalidArgument, "crop box outside the image");
  }
  const auto w = static_cast<std::size_t>(box.width());
  const auto h = static_cast<std::size_t>(box.height());
  std::vector<double> out;
  out.reserve(w * h * v.nz());
  for (std::size_t z = 0; z < v.nz(); ++z) {
    for (std::size_t y = 0; y < h; ++y) {
      const auto row = v.voxels.begin() +
                       static_cast<std::ptrdiff_t>(v.index(static_cast<std::size_t>(box.x_min),
                                                           static_cast<std::size_t>(box.y_min) + y, z));
      out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(w));
    }
  }
  Volume result({w, h, v.nz()}, v.spacing, std::move(out), v.patient_id);
  result.stored_type = v.stored_type;
  return result;
}

Mask crop(const Mask& m, const Box2D& box) {
  if (box.x_min < 0 || box.y_min < 0 || box.x_max >= static_cast<std::int64_t>(m.dims[0]) ||
      box.y_max >= static_cast<std::int64_t>(m.dims[1]) || box.x_min > box.x_max || box.y_min > box.y_max) {
    fail(ErrorCode::InvalidArgument, "crop box outside the mask");
  }
  const auto w = static_cast<std::size_t>(box.width());
  const auto h = static_cast<std::size_t>(box.height());
  std::vector<std::uint8_t> out;
  out.reserve(w * h * m.dims[2]);
  for (std::size_t z = 0; z < m.dims[2]; ++z) {
    for (std::size_t y = 0; y < h; ++y) {
      const auto row = m.voxels.begin() +
                       static_cast<std::ptrdiff_t>(m.index(static_cast<std::size_t>(box.x_min),
                                                           static_cast<std::size_t>(box.y_min) + y, z));
      out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(w));
    }
  }
  return Mask({w, h, m.dims[2]}, std::move(out));
}

Box2D gland_crop_box(const Volume& v, const Mask& m, std::int64_t margin) {
  if (v.dims != m.dims) {
    fail(ErrorCode::DimensionMismatch, "volume " + dims_str(v.dims) + " vs mask " + dims_str(m.dims));
  }
  return expand_and_clamp(gland_bounding_box(m), margin, v.nx(), v.ny());
}

Volume crop_to_gland(const Volume& v, const Mask& m, std::int64_t margin) {
  return crop(v, gland_crop_box(v, m, margin));
}

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t src_w, std::size_t src_h,
                                    std::size_t dst_w, std::size_t dst_h) {
  if (src.size() != src_w * src_h || src_w == 0 || src_h == 0 || dst_w == 0 || dst_h == 0) {
    fail(ErrorCode::ShapeMismatch, "resize: bad source or target shape");
  }
  std::vector<double> dst(dst_w * dst_h);
  const double sx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  const double sy = static_cast<double>(src_h) / static_cast<double>(dst_h);
  const double max_x = static_cast<double>(src_w - 1);
  const double max_y = static_cast<double>(src_h - 1);
  for (std::size_t j = 0; j < dst_h; ++j) {
    const double fy = std::clamp((static_cast<double>(j) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t i = 0; i < dst_w; ++i) {
      const double fx = std::clamp((static_cast<double>(i) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
      const double bottom = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
      dst[j * dst_w + i] = top * (1.0 - wy) + bottom * wy;
    }
  }
  return dst;
}

std::vector<SliceSample> extract_slices(const Volume& cropped, const Mask& m, double target_age,
                                        std::size_t input_size, SliceRule rule) {
  if (input_size == 0) fail(ErrorCode::InvalidArgument, "input_size must be positive");
  if (cropped.nz() != m.dims[2]) {
    fail(ErrorCode::DimensionMismatch, "volume and mask disagree on the number of slices");
  }
  std::vector<SliceSample> out;
  const std::size_t plane = cropped.slice_size();
  for (std::size_t z = 0; z < cropped.nz(); ++z) {
    if (rule == SliceRule::NonzeroMask && !m.slice_nonempty(z)) continue;
    std::span<const double> src(cropped.voxels.data() + z * plane, plane);
    SliceSample s;
    s.pixels = resize_bilinear(src, cropped.nx(), cropped.ny(), input_size, input_size);
    // bilinear weights are convex; clamp only guards against rounding.
    for (auto& p : s.pixels) p = std::clamp(p, 0.0, 1.0);
    s.side = input_size;
    s.patient_id = cropped.patient_id;
    s.slice_index = static_cast<std::int32_t>(z);
    s.target_age = target_age;
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorCode::EmptyMask, "no slice intersects the gland mask");
  return out;
}

}  // namespace pagkit::imaging
