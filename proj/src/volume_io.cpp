#include "pagkit/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"

#include "pagkit/error.hpp"

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace pagkit::imaging {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

template <typename T>
T load(const char* base, std::size_t offset) {
  T value;
  std::memcpy(&value, base + offset, sizeof(T));
  return value;
}

template <typename T>
void store(char* base, std::size_t offset, T value) {
  std::memcpy(base + offset, &value, sizeof(T));
}

std::size_t bytes_per_voxel(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return 1;
    case VoxelType::Int16: return 2;
    case VoxelType::Float32: return 4;
    case VoxelType::Float64: return 8;
  }
  return 0;
}

std::vector<double> decode(const char* data, std::size_t count, VoxelType t) {
  std::vector<double> out(count);
  const std::size_t step = bytes_per_voxel(t);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = data + i * step;
    switch (t) {
      case VoxelType::UInt8: out[i] = static_cast<unsigned char>(*p); break;
      case VoxelType::Int16: out[i] = load<std::int16_t>(p, 0); break;
      case VoxelType::Float32: out[i] = load<float>(p, 0); break;
      case VoxelType::Float64: out[i] = load<double>(p, 0); break;
    }
  }
  return out;
}

void encode(const std::vector<double>& voxels, VoxelType t, std::vector<char>& out) {
  const std::size_t step = bytes_per_voxel(t);
  const std::size_t start = out.size();
  out.resize(start + voxels.size() * step);
  char* base = out.data() + start;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const double v = voxels[i];
    char* p = base + i * step;
    switch (t) {
      case VoxelType::UInt8:
        if (v != std::floor(v) || v < 0 || v > 255) fail(ErrorCode::InvalidArgument, "value not representable as uint8");
        *p = static_cast<char>(static_cast<unsigned char>(v));
        break;
      case VoxelType::Int16:
        if (v != std::floor(v) || v < std::numeric_limits<std::int16_t>::min() ||
            v > std::numeric_limits<std::int16_t>::max()) {
          fail(ErrorCode::InvalidArgument, "value not representable as int16");
        }
        store(p, 0, static_cast<std::int16_t>(v));
        break;
      case VoxelType::Float32: store(p, 0, static_cast<float>(v)); break;
      case VoxelType::Float64: store(p, 0, v); break;
    }
  }
}

std::string_view dtype_name(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return "uint8";
    case VoxelType::Int16: return "int16";
    case VoxelType::Float32: return "float32";
    case VoxelType::Float64: return "float64";
  }
  return "?";
}

VoxelType dtype_from_name(const std::string& s) {
  if (s == "uint8") return VoxelType::UInt8;
  if (s == "int16") return VoxelType::Int16;
  if (s == "float32") return VoxelType::Float32;
  if (s == "float64") return VoxelType::Float64;
  fail(ErrorCode::UnsupportedDatatype, "fixture dtype '" + s + "'");
}

fs::path with_ext(fs::path p, const char* ext) { return p.replace_extension(ext); }

}  // namespace

Volume read_nifti(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  if (bytes.size() < kNiftiHeaderSize) fail(ErrorCode::TruncatedFile, path.string() + ": header shorter than 348 bytes");
  const char* h = bytes.data();

  const bool single_file = std::memcmp(h + 344, "n+1\0", 4) == 0;
  const bool pair_file = std::memcmp(h + 344, "ni1\0", 4) == 0;
  if (!single_file && !pair_file) fail(ErrorCode::BadMagic, path.string());

  if (load<std::int32_t>(h, 0) != static_cast<std::int32_t>(kNiftiHeaderSize)) {
    fail(ErrorCode::BadHeader, path.string() + ": sizeof_hdr is not 348 (big-endian files are not supported)");
  }
  const auto ndim = load<std::int16_t>(h, 40);
  if (ndim < 3 || ndim > 7) fail(ErrorCode::BadHeader, path.string() + ": expected 3 spatial dims");
  Dims dims{};
  for (int i = 1; i <= 7; ++i) {
    const auto d = load<std::int16_t>(h, 40 + 2 * static_cast<std::size_t>(i));
    if (i <= 3) {
      if (d < 1) fail(ErrorCode::BadHeader, path.string() + ": non-positive dim");
      dims[static_cast<std::size_t>(i - 1)] = static_cast<std::size_t>(d);
    } else if (i <= ndim && d != 1) {
      fail(ErrorCode::BadHeader, path.string() + ": only 3-D volumes are supported");
    }
  }

  const auto datatype = load<std::int16_t>(h, 70);
  VoxelType type;
  if (datatype == kNiftiInt16) {
    type = VoxelType::Int16;
  } else if (datatype == kNiftiFloat32) {
    type = VoxelType::Float32;
  } else {
    fail(ErrorCode::UnsupportedDatatype, path.string() + ": datatype " + std::to_string(datatype));
  }

  Spacing spacing{};
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = std::fabs(load<float>(h, 80 + 4 * i));
    spacing[i] = s > 0.0 ? s : 1.0;
  }

  const std::size_t count = dims[0] * dims[1] * dims[2];
  const std::size_t payload = count * bytes_per_voxel(type);

  std::vector<char> pair_bytes;
  const char* data = nullptr;
  std::size_t available = 0;
  const auto vox_offset = static_cast<std::size_t>(load<float>(h, 108));
  if (single_file) {
    if (vox_offset < kNiftiHeaderSize) fail(ErrorCode::BadHeader, path.string() + ": vox_offset inside header");
    available = bytes.size() > vox_offset ? bytes.size() - vox_offset : 0;
    data = h + vox_offset;
  } else {
    pair_bytes = slurp(with_ext(path, ".img"));
    available = pair_bytes.size() > vox_offset ? pair_bytes.size() - vox_offset : 0;
    data = pair_bytes.data() + vox_offset;
  }
  if (available < payload) {
    fail(ErrorCode::TruncatedFile, path.string() + ": payload has " + std::to_string(available) + " bytes, " +
                                       std::to_string(payload) + " expected");
  }

  Volume v(dims, spacing, decode(data, count, type), path.stem().string());
  v.stored_type = type;

  const float slope = load<float>(h, 112);
  const float inter = load<float>(h, 116);
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f)) {
    for (auto& x : v.voxels) x = x * slope + inter;
    v.stored_type = VoxelType::Float32;
  }
  return v;
}

void write_nifti(const Volume& v, const fs::path& path) {
  v.validate();
  for (auto d : v.dims) {
    if (d > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max())) {
      fail(ErrorCode::InvalidArgument, "dimension too large for NIfTI-1");
    }
  }
  const VoxelType type = v.stored_type == VoxelType::Int16 || v.stored_type == VoxelType::UInt8
                             ? VoxelType::Int16
                             : VoxelType::Float32;

  std::vector<char> bytes(kNiftiVoxOffset, 0);
  char* h = bytes.data();
  store<std::int32_t>(h, 0, static_cast<std::int32_t>(kNiftiHeaderSize));
  const std::int16_t dim[8] = {3,
                               static_cast<std::int16_t>(v.dims[0]),
                               static_cast<std::int16_t>(v.dims[1]),
                               static_cast<std::int16_t>(v.dims[2]),
                               1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) store(h, 40 + 2 * i, dim[i]);
  store<std::int16_t>(h, 70, type == VoxelType::Int16 ? kNiftiInt16 : kNiftiFloat32);
  store<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(type)));
  const float pixdim[8] = {1.0f,
                           static_cast<float>(v.spacing[0]),
                           static_cast<float>(v.spacing[1]),
                           static_cast<float>(v.spacing[2]),
                           0.0f, 0.0f, 0.0f, 0.0f};
  for (std::size_t i = 0; i < 8; ++i) store(h, 76 + 4 * i, pixdim[i]);
  store<float>(h, 108, static_cast<float>(kNiftiVoxOffset));
  store<float>(h, 112, 1.0f);
  store<float>(h, 116, 0.0f);
  h[123] = 2;  // xyzt_units: mm
  std::memcpy(h + 344, "n+1\0", 4);

  encode(v.voxels, type, bytes);
  spit(path, bytes);
}

Volume read_fixture(const fs::path& path) {
  const fs::path meta_path = with_ext(path, ".json");
  std::ifstream in(meta_path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + meta_path.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, meta_path.string() + ": " + e.what());
  }
  Dims dims{};
  Spacing spacing{1.0, 1.0, 1.0};
  VoxelType type;
  std::string id;
  try {
    const auto d = meta.at("dims").get<std::vector<std::int64_t>>();
    if (d.size() != 3) fail(ErrorCode::BadHeader, meta_path.string() + ": dims must have 3 entries");
    for (std::size_t i = 0; i < 3; ++i) {
      if (d[i] < 1) fail(ErrorCode::BadHeader, meta_path.string() + ": non-positive dim");
      dims[i] = static_cast<std::size_t>(d[i]);
    }
    if (meta.contains("spacing")) {
      const auto s = meta.at("spacing").get<std::vector<double>>();
      if (s.size() != 3) fail(ErrorCode::BadHeader, meta_path.string() + ": spacing must have 3 entries");
      std::copy(s.begin(), s.end(), spacing.begin());
    }
    type = dtype_from_name(meta.at("dtype").get<std::string>());
    id = meta.value("patient_id", path.stem().string());
  } catch (const json::exception& e) {
    fail(ErrorCode::BadHeader, meta_path.string() + ": " + e.what());
  }

  const std::vector<char> payload = slurp(with_ext(path, ".raw"));
  const std::size_t count = dims[0] * dims[1] * dims[2];
  if (payload.size() < count * bytes_per_voxel(type)) {
    fail(ErrorCode::TruncatedFile, with_ext(path, ".raw").string());
  }
  Volume v(dims, spacing, decode(payload.data(), count, type), id);
  v.stored_type = type;
  return v;
}

void write_fixture(const Volume& v, const fs::path& path) {
  v.validate();
  json meta = {{"dims", {v.dims[0], v.dims[1], v.dims[2]}},
               {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
               {"dtype", dtype_name(v.stored_type)},
               {"patient_id", v.patient_id}};
  const std::string text = meta.dump(2) + "\n";
  spit(with_ext(path, ".json"), std::vector<char>(text.begin(), text.end()));
  std::vector<char> payload;
  encode(v.voxels, v.stored_type, payload);
  spit(with_ext(path, ".raw"), payload);
}

Volume read_volume(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".nii") return read_nifti(path);
  if (ext == ".json" || ext == ".raw") return read_fixture(path);
  fail(ErrorCode::UnsupportedDatatype, "unrecognised volume file extension: " + path.string());
}

void write_volume(const Volume& v, const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".nii") return write_nifti(v, path);
  if (ext == ".json" || ext == ".raw") return write_fixture(v, path);
  fail(ErrorCode::UnsupportedDatatype, "unrecognised volume file extension: " + path.string());
}

Mask read_mask(const fs::path& path) { return Mask::from_volume(read_volume(path)); }

}  // namespace pagkit::imaging
