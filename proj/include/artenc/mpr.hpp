#pragma once

#include <vector>

#include "artenc/geometry.hpp"
#include "artenc/volume.hpp"

namespace artenc {

// Natural cubic spline through 3D points, parameterized by cumulative
// chord length, with a dense arc-length table for uniform-step
// evaluation.
class CubicSpline3 {
public:
    explicit CubicSpline3(const std::vector<Vec3>& points);

    Vec3 evaluate(double t) const;    // t in [0, t_max]
    Vec3 derivative(double t) const;  // d position / d t
    double t_max() const { return knots_.back(); }

    double arc_length() const { return arc_total_; }
    // Parameter at a given arc length along the curve.
    double t_at_arc_length(double s) const;

private:
    void build_arc_table();

    std::vector<Vec3> pts_;
    std::vector<Vec3> second_;  // second derivatives at knots
    std::vector<double> knots_;
    std::vector<double> arc_t_, arc_s_;
    double arc_total_ = 0;
};

// Arc-length re-parameterization at uniform steps via cubic spline;
// endpoints are preserved and the realized step is arc_length/(N-1)
// with N = round(arc_length/step) + 1.
Centerline resample_centerline(const Centerline& centerline, double step_mm = 0.3);

// Rotation-minimizing frames via the double-reflection method. The first
// normal is the projection of +x onto the first tangent's orthogonal
// plane (+y when parallel within 1e-6).
std::vector<Frame> transport_frames(const Centerline& resampled);

// Straightened MPR: 40x40 grid of 0.3 mm steps in the (normal, binormal)
// plane at every resampled centerline point, trilinear samples,
// out-of-volume fill -1000 HU. Arteries longer than 800 points are
// truncated at the distal end with the `truncated` flag set.
MprVolume reconstruct_mpr(const CtVolume& volume, const Centerline& centerline);

}  // namespace artenc
