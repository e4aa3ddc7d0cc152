#pragma once

#include <filesystem>

#include "pagkit/imaging.hpp"

namespace pagkit::imaging {

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;
inline constexpr std::int16_t kNiftiInt16 = 4;
inline constexpr std::int16_t kNiftiFloat32 = 16;

/// Reads an uncompressed little-endian NIfTI-1 volume. Single-file ("n+1")
/// images carry the payload after the header; "ni1" pairs read it from the
/// sibling .img file.
Volume read_nifti(const std::filesystem::path& path);

/// Writes a single-file NIfTI-1 with a canonical header: 3 dims, pixdim
/// from spacing, vox_offset 352, unit scaling, no orientation codes.
/// Int16 volumes must hold integral values in range.
void write_nifti(const Volume& v, const std::filesystem::path& path);

/// Fixture pair: <stem>.json (dims, spacing, dtype, patient_id) and
/// <stem>.raw (x-fastest little-endian payload). `path` may name either file.
Volume read_fixture(const std::filesystem::path& path);
void write_fixture(const Volume& v, const std::filesystem::path& path);

/// Dispatches on extension: .nii -> NIfTI, .json/.raw -> fixture.
Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

Mask read_mask(const std::filesystem::path& path);

}  // namespace pagkit::imaging
