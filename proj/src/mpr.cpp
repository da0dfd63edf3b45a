#include "artenc/mpr.hpp"

#include <algorithm>
#include <cmath>

#include "artenc/common.hpp"

namespace artenc {

namespace {
constexpr double kMarginMm = 6.0;           // 40 * 0.3 / 2
constexpr double kArcTableStepMm = 0.01;
constexpr double kMaxTangentAngleDeg = 30.0;
}  // namespace

CubicSpline3::CubicSpline3(const std::vector<Vec3>& points) : pts_(points) {
    const std::size_t n = pts_.size();
    if (n < 2) throw ConfigError("spline needs at least 2 points");

    knots_.resize(n);
    knots_[0] = 0;
    for (std::size_t i = 1; i < n; ++i) {
        const double d = (pts_[i] - pts_[i - 1]).norm();
        if (d == 0) throw ConfigError("spline input has coincident consecutive points");
        knots_[i] = knots_[i - 1] + d;
    }

    second_.assign(n, Vec3{});
    if (n > 2) {
        // Tridiagonal solve for natural spline second derivatives,
        // per component.
        std::vector<double> u(n, 0.0);
        std::vector<Vec3> y2(n, Vec3{});
        std::vector<Vec3> v(n, Vec3{});
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double sig = (knots_[i] - knots_[i - 1]) / (knots_[i + 1] - knots_[i - 1]);
            const double px = sig * u[i - 1] + 2.0;
            u[i] = (sig - 1.0) / px;
            Vec3 d = (pts_[i + 1] - pts_[i]) / (knots_[i + 1] - knots_[i]) -
                     (pts_[i] - pts_[i - 1]) / (knots_[i] - knots_[i - 1]);
            v[i] = (d * (6.0 / (knots_[i + 1] - knots_[i - 1])) - v[i - 1] * sig) / px;
        }
        for (std::size_t i = n - 2; i >= 1; --i) {
            second_[i] = v[i] + second_[i + 1] * u[i];
            if (i == 1) break;
        }
    }
    build_arc_table();
}

Vec3 CubicSpline3::evaluate(double t) const {
    const std::size_t n = pts_.size();
    t = std::clamp(t, knots_.front(), knots_.back());
    std::size_t hi = static_cast<std::size_t>(
        std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin());
    hi = std::clamp<std::size_t>(hi, 1, n - 1);
    const std::size_t lo = hi - 1;
    const double h = knots_[hi] - knots_[lo];
    const double a = (knots_[hi] - t) / h;
    const double b = (t - knots_[lo]) / h;
    return pts_[lo] * a + pts_[hi] * b +
           (second_[lo] * (a * a * a - a) + second_[hi] * (b * b * b - b)) * (h * h / 6.0);
}

Vec3 CubicSpline3::derivative(double t) const {
    const std::size_t n = pts_.size();
    t = std::clamp(t, knots_.front(), knots_.back());
    std::size_t hi = static_cast<std::size_t>(
        std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin());
    hi = std::clamp<std::size_t>(hi, 1, n - 1);
    const std::size_t lo = hi - 1;
    const double h = knots_[hi] - knots_[lo];
    const double a = (knots_[hi] - t) / h;
    const double b = (t - knots_[lo]) / h;
    return (pts_[hi] - pts_[lo]) / h +
           (second_[lo] * (1.0 - 3.0 * a * a) + second_[hi] * (3.0 * b * b - 1.0)) * (h / 6.0);
}

void CubicSpline3::build_arc_table() {
    arc_t_.clear();
    arc_s_.clear();
    arc_t_.push_back(0);
    arc_s_.push_back(0);
    double s = 0;
    Vec3 prev = evaluate(0);
    const double total_t = knots_.back();
    const auto steps = static_cast<std::size_t>(std::ceil(total_t / kArcTableStepMm));
    for (std::size_t i = 1; i <= steps; ++i) {
        const double t = total_t * static_cast<double>(i) / static_cast<double>(steps);
        const Vec3 p = evaluate(t);
        s += (p - prev).norm();
        prev = p;
        arc_t_.push_back(t);
        arc_s_.push_back(s);
    }
    arc_total_ = s;
}

double CubicSpline3::t_at_arc_length(double s) const {
    s = std::clamp(s, 0.0, arc_total_);
    const auto it = std::lower_bound(arc_s_.begin(), arc_s_.end(), s);
    std::size_t hi = static_cast<std::size_t>(it - arc_s_.begin());
    if (hi == 0) return arc_t_.front();
    if (hi >= arc_s_.size()) return arc_t_.back();
    const std::size_t lo = hi - 1;
    const double span = arc_s_[hi] - arc_s_[lo];
    const double f = span > 0 ? (s - arc_s_[lo]) / span : 0.0;
    return arc_t_[lo] + f * (arc_t_[hi] - arc_t_[lo]);
}

Centerline resample_centerline(const Centerline& centerline, double step_mm) {
    centerline.validate();
    if (step_mm <= 0) throw ConfigError("resample step must be positive");
    CubicSpline3 spline(centerline.points_mm);
    const double len = spline.arc_length();
    if (len < 2 * step_mm)
        throw ConfigError("centerline too short to resample: " + std::to_string(len) + " mm");

    const int n = static_cast<int>(std::llround(len / step_mm)) + 1;
    Centerline out;
    out.artery_id = centerline.artery_id;
    out.patient_id = centerline.patient_id;
    out.points_mm.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double s = len * static_cast<double>(i) / static_cast<double>(n - 1);
        out.points_mm.push_back(spline.evaluate(spline.t_at_arc_length(s)));
    }
    // endpoints exactly
    out.points_mm.front() = centerline.points_mm.front();
    out.points_mm.back() = centerline.points_mm.back();
    return out;
}

std::vector<Frame> transport_frames(const Centerline& resampled) {
    const auto& p = resampled.points_mm;
    const std::size_t n = p.size();
    if (n < 2) throw ConfigError("transport_frames needs at least 2 points");

    std::vector<Vec3> tangents(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 d;
        if (i == 0)
            d = p[1] - p[0];
        else if (i + 1 == n)
            d = p[n - 1] - p[n - 2];
        else
            d = p[i + 1] - p[i - 1];
        const double nm = d.norm();
        if (nm == 0) throw ConfigError("zero-length tangent in resampled centerline");
        tangents[i] = d / nm;
    }

    std::vector<Frame> frames(n);
    frames[0].tangent = tangents[0];
    Vec3 ref{1, 0, 0};
    Vec3 r0 = ref - tangents[0] * ref.dot(tangents[0]);
    if (r0.norm() < 1e-6) {
        ref = Vec3{0, 1, 0};
        r0 = ref - tangents[0] * ref.dot(tangents[0]);
    }
    frames[0].normal = r0.normalized();
    frames[0].binormal = frames[0].tangent.cross(frames[0].normal);

    // Double-reflection transport of the normal.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const Vec3 v1 = p[i + 1] - p[i];
        const double c1 = v1.dot(v1);
        const Vec3 rl = frames[i].normal - v1 * (2.0 / c1 * v1.dot(frames[i].normal));
        const Vec3 tl = tangents[i] - v1 * (2.0 / c1 * v1.dot(tangents[i]));
        const Vec3 v2 = tangents[i + 1] - tl;
        const double c2 = v2.dot(v2);
        Vec3 r_next = c2 > 0 ? rl - v2 * (2.0 / c2 * v2.dot(rl)) : rl;
        // Re-orthogonalize against the tangent to stop drift.
        r_next = (r_next - tangents[i + 1] * r_next.dot(tangents[i + 1])).normalized();
        frames[i + 1].tangent = tangents[i + 1];
        frames[i + 1].normal = r_next;
        frames[i + 1].binormal = tangents[i + 1].cross(r_next);
    }
    return frames;
}

MprVolume reconstruct_mpr(const CtVolume& volume, const Centerline& centerline) {
    volume.validate();
    Centerline rs = resample_centerline(centerline, MprVolume::kSpacingMm);

    MprVolume mpr;
    mpr.artery_id = centerline.artery_id;
    if (static_cast<int>(rs.points_mm.size()) > MprVolume::kMaxLength) {
        rs.points_mm.resize(MprVolume::kMaxLength);
        mpr.truncated = true;
    }
    mpr.length = static_cast<int>(rs.points_mm.size());
    mpr.points_mm = rs.points_mm;

    // Precondition: 6 mm margin from the voxel-center lattice bounds.
    for (const Vec3& p : rs.points_mm) {
        for (int a = 0; a < 3; ++a) {
            const double comp = a == 0 ? p.x : (a == 1 ? p.y : p.z);
            const double lo = volume.origin_mm[a] + kMarginMm;
            const double hi = volume.origin_mm[a] +
                              (volume.extents[a] - 1) * volume.spacing_mm[a] - kMarginMm;
            if (comp < lo || comp > hi)
                throw ConfigError("centerline point outside volume bounds beyond the 6 mm margin");
        }
    }

    mpr.frames = transport_frames(rs);

    const double angle_limit = std::cos(kMaxTangentAngleDeg * 3.141592653589793 / 180.0);
    for (std::size_t i = 1; i < mpr.frames.size(); ++i)
        if (mpr.frames[i].tangent.dot(mpr.frames[i - 1].tangent) < angle_limit)
            throw ConfigError("consecutive tangents bend by more than 30 degrees");

    mpr.data.assign(static_cast<std::size_t>(MprVolume::kCross) * MprVolume::kCross *
                        static_cast<std::size_t>(mpr.length),
                    0.f);
    for (int s = 0; s < mpr.length; ++s) {
        const Vec3& c = mpr.points_mm[static_cast<std::size_t>(s)];
        const Frame& f = mpr.frames[static_cast<std::size_t>(s)];
        for (int v = 0; v < MprVolume::kCross; ++v) {
            const double dv = (v - MprVolume::kCenterIndex) * MprVolume::kSpacingMm;
            for (int u = 0; u < MprVolume::kCross; ++u) {
                const double du = (u - MprVolume::kCenterIndex) * MprVolume::kSpacingMm;
                const Vec3 pos = c + f.normal * du + f.binormal * dv;
                mpr.at(u, v, s) = volume.sample(pos, -1000.f);
            }
        }
    }
    return mpr;
}

}  // namespace artenc
