#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "artenc/common.hpp"
#include "artenc/geometry.hpp"

namespace artenc {

// Scalar 3D grid in HU-like units. Voxel (i, j, k) sits at
// origin + (i*sx, j*sy, k*sz); index i is fastest.
struct CtVolume {
    std::array<int, 3> extents{0, 0, 0};
    std::array<double, 3> spacing_mm{1, 1, 1};
    std::array<double, 3> origin_mm{0, 0, 0};
    std::vector<float> voxels;

    std::size_t size() const {
        return static_cast<std::size_t>(extents[0]) * extents[1] * extents[2];
    }

    float& at(int i, int j, int k) {
        return voxels[static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(extents[0]) *
                          (static_cast<std::size_t>(j) +
                           static_cast<std::size_t>(extents[1]) * static_cast<std::size_t>(k))];
    }
    float at(int i, int j, int k) const {
        return voxels[static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(extents[0]) *
                          (static_cast<std::size_t>(j) +
                           static_cast<std::size_t>(extents[1]) * static_cast<std::size_t>(k))];
    }

    void allocate(float fill = 0.f) { voxels.assign(size(), fill); }

    Vec3 voxel_center(int i, int j, int k) const {
        return {origin_mm[0] + i * spacing_mm[0], origin_mm[1] + j * spacing_mm[1],
                origin_mm[2] + k * spacing_mm[2]};
    }

    // Trilinear interpolation at a world position; outside the voxel-center
    // lattice returns `fill`.
    float sample(const Vec3& p_mm, float fill) const;

    void validate() const;
};

// Straightened volume resampled along a centerline. data is a 40x40xL
// grid, index (u, v, s) with u fastest; u runs along the frame normal,
// v along the binormal, s along the artery. In-plane sample (u, v) sits
// at offset ((u-20)*0.3, (v-20)*0.3) mm from the centerline point.
struct MprVolume {
    static constexpr int kCross = 40;
    static constexpr double kSpacingMm = 0.3;
    static constexpr int kMaxLength = 800;
    static constexpr int kCenterIndex = 20;

    int length = 0;  // L
    std::vector<float> data;  // kCross * kCross * length
    std::vector<Vec3> points_mm;
    std::vector<Frame> frames;
    bool truncated = false;
    std::string artery_id;

    float& at(int u, int v, int s) {
        return data[static_cast<std::size_t>(u) +
                    kCross * (static_cast<std::size_t>(v) +
                              static_cast<std::size_t>(kCross) * static_cast<std::size_t>(s))];
    }
    float at(int u, int v, int s) const {
        return data[static_cast<std::size_t>(u) +
                    kCross * (static_cast<std::size_t>(v) +
                              static_cast<std::size_t>(kCross) * static_cast<std::size_t>(s))];
    }
};

// `.vol` container: one line of JSON then raw little-endian float32
// voxels. MPR volumes use kind "mpr" and carry frames in the header.
void write_vol(const std::string& path, const CtVolume& vol);
CtVolume read_vol(const std::string& path);

void write_mpr_vol(const std::string& path, const MprVolume& mpr);
MprVolume read_mpr_vol(const std::string& path);

nlohmann::json read_vol_header(const std::string& path);

// Ordered 3D polyline along an artery lumen.
struct Centerline {
    std::vector<Vec3> points_mm;
    std::string artery_id;
    std::string patient_id;

    void validate() const;
    double polyline_length() const;
};

// CSV with header x_mm,y_mm,z_mm.
void write_centerline_csv(const std::string& path, const Centerline& c);
Centerline read_centerline_csv(const std::string& path);

}  // namespace artenc
