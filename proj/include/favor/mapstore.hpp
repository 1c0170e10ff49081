#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "favor/voxel.hpp"

namespace favor {

/// FVOR layout, little-endian:
///   "FVOR", u32 version, u32 voxel_count, u32 channels, u32 resolution, u32 patch_size,
///   6 x f64 intrinsics (fx, fy, cx, cy, width, height)
///   per voxel: u64 track_id, 3 x f64 center, f64 side, R^3*C x f32 descriptors (node-major),
///   R^3 x f32 raw densities.
inline constexpr std::uint32_t kMapVersion = 1;
inline constexpr std::size_t kMapHeaderBytes = 4 + 5 * 4 + 6 * 8;

struct MapFileHeader {
  std::uint32_t version = kMapVersion;
  std::uint32_t voxel_count = 0;
  std::uint32_t channels = 0;
  std::uint32_t resolution = 0;
  std::uint32_t patch_size = 0;
  CameraIntrinsics intrinsics;
};

/// Analytic serialized size in bytes.
std::size_t map_file_size(std::size_t voxel_count, int resolution, int channels);

/// Rounds both lattices to float32; afterwards the in-memory map equals its serialized form.
void quantize_to_float(VoxelMap& map);

std::size_t write_map(std::ostream& out, const VoxelMap& map);
VoxelMap read_map(std::istream& in);

/// Returns the number of bytes written. Throws IoFailure.
std::size_t save_map(const VoxelMap& map, const std::filesystem::path& path);
/// Throws IoFailure, BadMagic, VersionMismatch or CorruptPayload.
VoxelMap load_map(const std::filesystem::path& path);
MapFileHeader read_map_header(const std::filesystem::path& path);

}  // namespace favor
