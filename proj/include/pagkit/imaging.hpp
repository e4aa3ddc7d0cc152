#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pagkit::imaging {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;

/// On-disk storage type of a volume; used when writing it back out.
enum class VoxelType { Int16, Float32, Float64, UInt8 };

/// 3-D voxel grid, x-fastest.
struct Volume {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<double> voxels;
  std::string patient_id;
  VoxelType stored_type = VoxelType::Float32;

  Volume() = default;
  Volume(Dims d, Spacing s, std::vector<double> v, std::string id = {});

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t slice_size() const { return dims[0] * dims[1]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }

  /// Throws DimensionMismatch / InvalidArgument when the invariants do not hold.
  void validate() const;
};

/// Binary gland mask, same grid as its paired volume.
struct Mask {
  Dims dims{1, 1, 1};
  std::vector<std::uint8_t> voxels;

  Mask() = default;
  Mask(Dims d, std::vector<std::uint8_t> v);

  /// Nonzero voxels become 1.
  static Mask from_volume(const Volume& v);

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  bool at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)] != 0; }
  bool slice_nonempty(std::size_t z) const;
};

/// Inclusive in-plane pixel rectangle.
struct Box2D {
  std::int64_t x_min = 0;
  std::int64_t x_max = 0;
  std::int64_t y_min = 0;
  std::int64_t y_max = 0;

  std::int64_t width() const { return x_max - x_min + 1; }
  std::int64_t height() const { return y_max - y_min + 1; }
  bool contains(std::int64_t x, std::int64_t y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  friend bool operator==(const Box2D&, const Box2D&) = default;
};

/// One square 2-D network input.
struct SliceSample {
  std::vector<double> pixels;  // row-major, side * side
  std::size_t side = 0;
  std::string patient_id;
  std::int32_t slice_index = 0;
  double target_age = 0.0;
};

struct NormalizeMethod {
  enum class Kind { MinMax, PercentileClip };
  Kind kind = Kind::PercentileClip;
  double p_lo = 1.0;
  double p_hi = 99.0;

  static NormalizeMethod minmax() { return {Kind::MinMax, 0.0, 100.0}; }
  static NormalizeMethod percentile_clip(double lo, double hi) { return {Kind::PercentileClip, lo, hi}; }
};

/// Parameters actually applied by normalize_intensity, kept for provenance.
struct NormalizeParams {
  double lower = 0.0;
  double upper = 1.0;
};

enum class SliceRule { NonzeroMask, AllSlices };

Volume normalize_intensity(const Volume& v, const NormalizeMethod& method,
                           NormalizeParams* applied = nullptr);

Box2D gland_bounding_box(const Mask& m);

/// Expands a box by margin on each side and clamps it to an nx by ny image.
Box2D expand_and_clamp(const Box2D& box, std::int64_t margin, std::size_t nx, std::size_t ny);

Volume crop(const Volume& v, const Box2D& box);
Mask crop(const Mask& m, const Box2D& box);

/// Crop box used by crop_to_gland, exposed for manifests.
Box2D gland_crop_box(const Volume& v, const Mask& m, std::int64_t margin = 40);

Volume crop_to_gland(const Volume& v, const Mask& m, std::int64_t margin = 40);

/// Bilinear resize (half-pixel centres, edge clamped) of a row-major image.
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t src_w, std::size_t src_h,
                                    std::size_t dst_w, std::size_t dst_h);

std::vector<SliceSample> extract_slices(const Volume& cropped, const Mask& m, double target_age,
                                        std::size_t input_size = 128,
                                        SliceRule rule = SliceRule::NonzeroMask);

}  // namespace pagkit::imaging
