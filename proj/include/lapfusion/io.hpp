#pragma once

#include "lapfusion/mesh.hpp"
#include "lapfusion/pointcloud.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace lapfusion {

/// Positions and faces only. Polygons are fan-triangulated; texture/normal
/// indices and negative (relative) indices are accepted.
TriangleMesh read_obj(const std::filesystem::path& path);
/// Shortest round-trip decimal formatting, so written files reload bit-exactly
/// and identical meshes produce identical bytes.
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Reads the `vertex` element of an ascii or binary_little_endian PLY: x, y, z
/// and the optional `depth` property. Other properties and elements are skipped.
/// A header line "comment viewpoint x y z" sets the frame's viewpoint.
PointCloudFrame read_ply(const std::filesystem::path& path);

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Writes x, y, z as doubles plus `depth` when the frame has depth values, and
/// the viewpoint comment when one is set.
void write_ply(const std::filesystem::path& path, const PointCloudFrame& frame,
               PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Writes points with per-point vectors stored as nx, ny, nz (e.g. Laplacian
/// coordinates for inspection in a viewer).
void write_ply_vectors(const std::filesystem::path& path, std::span<const Vec3> points,
                       std::span<const Vec3> vectors, PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Shortest round-trip text for a double.
std::string format_double(double x);

} // namespace lapfusion
