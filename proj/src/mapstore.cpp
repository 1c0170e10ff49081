#include "favor/mapstore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "binary_io.hpp"
#include "favor/error.hpp"

namespace favor {

namespace {

void check_map(const VoxelMap& map) {
  for (const auto& v : map.voxels) {
    if (v.resolution != map.resolution || v.channels() != map.channels ||
        v.desc_nodes.rows() != v.node_count() || v.density_nodes.size() != v.node_count())
      throw Error(ErrorCode::InvalidArgument, "voxel shape disagrees with the map header");
  }
}

MapFileHeader read_header(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FVOR", 4) != 0) throw Error(ErrorCode::BadMagic, "not an FVOR file");
  MapFileHeader h;
  if (!detail::read_le(in, h.version)) throw Error(ErrorCode::CorruptPayload, "truncated header");
  if (h.version != kMapVersion) throw Error(ErrorCode::VersionMismatch, "unsupported FVOR version");
  double intr[6];
  if (!detail::read_le(in, h.voxel_count) || !detail::read_le(in, h.channels) || !detail::read_le(in, h.resolution) ||
      !detail::read_le(in, h.patch_size))
    throw Error(ErrorCode::CorruptPayload, "truncated header");
  for (double& x : intr)
    if (!detail::read_le(in, x) || !std::isfinite(x)) throw Error(ErrorCode::CorruptPayload, "bad intrinsics");
  if (h.resolution < 2 || h.resolution > 64 || h.channels < 1 || h.channels > 4096)
    throw Error(ErrorCode::CorruptPayload, "implausible lattice shape");
  h.intrinsics = CameraIntrinsics{intr[0], intr[1], intr[2], intr[3], static_cast<int>(intr[4]),
                                  static_cast<int>(intr[5])};
  return h;
}

}  // namespace

std::size_t map_file_size(std::size_t voxel_count, int resolution, int channels) {
  const std::size_t nodes = static_cast<std::size_t>(resolution) * resolution * resolution;
  return kMapHeaderBytes + voxel_count * (8 + 3 * 8 + 8 + nodes * channels * 4 + nodes * 4);
}

void quantize_to_float(VoxelMap& map) {
  for (auto& v : map.voxels) {
    v.desc_nodes = v.desc_nodes.cast<float>().cast<double>();
    v.density_nodes = v.density_nodes.cast<float>().cast<double>();
  }
}

std::size_t write_map(std::ostream& out, const VoxelMap& map) {
  check_map(map);
  out.write("FVOR", 4);
  detail::write_le<std::uint32_t>(out, kMapVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.voxels.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.channels));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.resolution));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.patch_size));
  const auto& k = map.intrinsics;
  for (double x : {k.fx, k.fy, k.cx, k.cy, static_cast<double>(k.width), static_cast<double>(k.height)})
    detail::write_le<double>(out, x);
  for (const auto& v : map.voxels) {
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(v.track_id));
    for (int i = 0; i < 3; ++i) detail::write_le<double>(out, v.center[i]);
    detail::write_le<double>(out, v.side);
    for (Eigen::Index n = 0; n < v.desc_nodes.rows(); ++n)
      for (Eigen::Index c = 0; c < v.desc_nodes.cols(); ++c)
        detail::write_le<float>(out, static_cast<float>(v.desc_nodes(n, c)));
    for (Eigen::Index n = 0; n < v.density_nodes.size(); ++n)
      detail::write_le<float>(out, static_cast<float>(v.density_nodes[n]));
  }
  if (!out) throw Error(ErrorCode::IoFailure, "map write failed");
  return map_file_size(map.voxels.size(), map.resolution, map.channels);
}

VoxelMap read_map(std::istream& in) {
  const MapFileHeader h = read_header(in);
  VoxelMap map;
  map.intrinsics = h.intrinsics;
  map.channels = static_cast<int>(h.channels);
  map.resolution = static_cast<int>(h.resolution);
  map.patch_size = static_cast<int>(h.patch_size);
  const int nodes = map.resolution * map.resolution * map.resolution;
  auto read_f32 = [&](double& dst) {
    float f = 0.0f;
    if (!detail::read_le(in, f)) throw Error(ErrorCode::CorruptPayload, "truncated voxel payload");
    if (!std::isfinite(f)) throw Error(ErrorCode::CorruptPayload, "non-finite lattice value");
    dst = f;
  };
  auto read_f64 = [&](double& dst) {
    if (!detail::read_le(in, dst)) throw Error(ErrorCode::CorruptPayload, "truncated voxel payload");
    if (!std::isfinite(dst)) throw Error(ErrorCode::CorruptPayload, "non-finite voxel geometry");
  };
  map.voxels.reserve(std::min<std::uint32_t>(h.voxel_count, 1u << 20));
  for (std::uint32_t i = 0; i < h.voxel_count; ++i) {
    VoxelLandmark v;
    v.resolution = map.resolution;
    std::uint64_t id = 0;
    if (!detail::read_le(in, id)) throw Error(ErrorCode::CorruptPayload, "truncated voxel payload");
    v.track_id = static_cast<std::int64_t>(id);
    for (int k = 0; k < 3; ++k) read_f64(v.center[k]);
    read_f64(v.side);
    if (!(v.side > 0.0)) throw Error(ErrorCode::CorruptPayload, "non-positive voxel side");
    v.desc_nodes.resize(nodes, map.channels);
    for (int n = 0; n < nodes; ++n)
      for (int c = 0; c < map.channels; ++c) read_f32(v.desc_nodes(n, c));
    v.density_nodes.resize(nodes);
    for (int n = 0; n < nodes; ++n) read_f32(v.density_nodes[n]);
    map.voxels.push_back(std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::CorruptPayload, "trailing bytes");
  return map;
}

std::size_t save_map(const VoxelMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::size_t n = write_map(out, map);
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
  return n;
}

VoxelMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return read_map(in);
}

MapFileHeader read_map_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return read_header(in);
}

}  // namespace favor
