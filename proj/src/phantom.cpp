#include "artenc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "artenc/mpr.hpp"

namespace artenc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kFfrSeverityGain = 0.45;
constexpr double kFfrFloor = 0.3;
constexpr double kBackgroundHu = 60.0;
constexpr double kWalkStepMm = 2.0;
constexpr double kWalkWiggle = 0.08;  // radians per step; curvature radius ~25 mm
constexpr double kVolumeMarginMm = 8.0;

int weighted_pick(Rng& rng, const double* weights, int n) {
    double total = 0;
    for (int i = 0; i < n; ++i) total += weights[i];
    double u = rng.uniform() * total;
    for (int i = 0; i < n; ++i) {
        u -= weights[i];
        if (u < 0) return i;
    }
    return n - 1;
}

}  // namespace

std::string to_string(VesselLabel v) {
    switch (v) {
        case VesselLabel::LAD: return "LAD";
        case VesselLabel::LCX: return "LCX";
        case VesselLabel::RCA: return "RCA";
    }
    return "LAD";
}

VesselLabel vessel_from_string(const std::string& s) {
    if (s == "LAD") return VesselLabel::LAD;
    if (s == "LCX") return VesselLabel::LCX;
    if (s == "RCA") return VesselLabel::RCA;
    throw IoError("unknown vessel label: " + s);
}

std::string to_string(CohortRole r) {
    return r == CohortRole::Autoencoder ? "autoencoder" : "labeled";
}

CohortRole cohort_from_string(const std::string& s) {
    if (s == "autoencoder") return CohortRole::Autoencoder;
    if (s == "labeled") return CohortRole::Labeled;
    throw IoError("unknown cohort role: " + s);
}

void CohortSpec::validate() const {
    if (ae_patients < 0 || labeled_patients < 0)
        throw ConfigError("cohort patient counts must be non-negative");
    if (min_length_points < 100 || max_length_points > 800 ||
        min_length_points > max_length_points)
        throw ConfigError("cohort length range must lie within [100, 800]");
    if (severity_min < 0 || severity_max >= 1 || severity_min > severity_max)
        throw ConfigError("severity range must lie within [0, 1)");
    if (spacing_mm <= 0) throw ConfigError("spacing must be positive");
    if (image_noise_sd < 0 || label_noise_sd < 0)
        throw ConfigError("noise levels must be non-negative");
    if (lumen_radius_min < 0.8 || lumen_radius_max < lumen_radius_min)
        throw ConfigError("lumen radius range invalid (min 0.8 mm)");
    if (labeled_arteries_total != 0 &&
        (labeled_arteries_total < labeled_patients ||
         labeled_arteries_total > 3 * labeled_patients))
        throw ConfigError("labeled artery total must allow 1..3 arteries per patient");
}

CohortSpec CohortSpec::tiny() {
    CohortSpec s;
    s.ae_patients = 8;
    s.labeled_patients = 20;
    s.min_length_points = 100;
    s.max_length_points = 220;
    return s;
}

CohortSpec CohortSpec::paper_scale() {
    CohortSpec s;
    s.ae_patients = 50;
    s.labeled_patients = 137;
    s.labeled_arteries_total = 192;
    s.min_length_points = 100;
    s.max_length_points = 800;
    return s;
}

double compute_surrogate_ffr(const std::vector<Stenosis>& stenoses, double noise) {
    double burden = 0;
    for (const Stenosis& s : stenoses) {
        if (s.severity < 0 || s.severity >= 1)
            throw ConfigError("stenosis severity must be in [0, 1)");
        burden += kFfrSeverityGain * s.severity * s.severity;
    }
    return std::clamp(1.0 - burden + noise, kFfrFloor, 1.0);
}

double lumen_radius_at(const ArteryGeometry& geometry, double s_mm) {
    double area_keep = 1.0;
    for (const Stenosis& st : geometry.stenoses) {
        const double u = (s_mm - st.pos_mm) / (st.width_mm / 2.0);
        if (std::abs(u) < 1.0) {
            const double bump = 0.5 * (1.0 + std::cos(3.141592653589793 * u));  // cos^2 window
            area_keep = std::min(area_keep, 1.0 - st.severity * bump);
        }
    }
    return geometry.lumen_radius_mm * std::sqrt(std::max(area_keep, 0.02));
}

Centerline make_phantom_centerline(const ArteryGeometry& geometry, std::uint64_t seed,
                                   const std::string& artery_id,
                                   const std::string& patient_id) {
    if (geometry.length_points < 2) throw ConfigError("length_points must be >= 2");
    Rng rng(seed);
    const double target_mm = (geometry.length_points - 1) * MprVolume::kSpacingMm;

    // Random walk with a gently wandering direction, mostly along +z.
    Vec3 dir{rng.normal(0, 0.05), rng.normal(0, 0.05), 1.0};
    dir = dir.normalized();
    Vec3 pos{0, 0, 0};
    std::vector<Vec3> pts{pos};
    double walked = 0;
    while (walked < target_mm) {
        const double step = std::min(kWalkStepMm, target_mm - walked);
        Vec3 wloc{rng.normal(0, kWalkWiggle), rng.normal(0, kWalkWiggle),
                  rng.normal(0, kWalkWiggle * 0.3)};
        dir = (dir + wloc * (step / kWalkStepMm)).normalized();
        pos += dir * step;
        pts.push_back(pos);
        walked += step;
    }
    if (pts.size() < 3) pts.push_back(pos + dir * 0.3);

    // The spline arc through the walk points is slightly longer than the
    // chord sum; rescale about the start so MPR resampling lands on
    // exactly length_points points.
    const double arc = CubicSpline3(pts).arc_length();
    const double scale = target_mm / arc;
    for (Vec3& p : pts) p = pts[0] + (p - pts[0]) * scale;

    Centerline c;
    c.points_mm = std::move(pts);
    c.artery_id = artery_id;
    c.patient_id = patient_id;
    return c;
}

void rasterize_artery_into(CtVolume& vol, const Centerline& centerline,
                           const ArteryGeometry& geometry, double image_noise_sd,
                           std::uint64_t noise_seed) {
    vol.validate();
    const double falloff = std::max({vol.spacing_mm[0], vol.spacing_mm[1], vol.spacing_mm[2]});

    // Background with optional voxel noise, clamped to soft tissue range.
    Rng noise_rng(noise_seed);
    for (float& v : vol.voxels) {
        double b = kBackgroundHu;
        if (image_noise_sd > 0) b += noise_rng.normal(0, image_noise_sd);
        v = static_cast<float>(std::clamp(b, 0.0, 150.0));
    }

    // Dense samples along the lumen; per-sample ball stamps, max-combined.
    const Centerline rs = resample_centerline(centerline, 0.2);
    Rng lumen_rng(noise_seed ^ 0x5bd1e995u);
    double arc = 0;
    for (std::size_t i = 0; i < rs.points_mm.size(); ++i) {
        if (i > 0) arc += (rs.points_mm[i] - rs.points_mm[i - 1]).norm();
        const double radius = lumen_radius_at(geometry, arc);
        const double lumen_hu =
            std::clamp(geometry.lumen_hu + 15.0 * std::sin(arc * 0.11), 255.0, 445.0);
        const double reach = radius + falloff;
        const Vec3& c = rs.points_mm[i];

        int lo[3], hi[3];
        const double cc[3] = {c.x, c.y, c.z};
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<int>(std::floor((cc[a] - reach - vol.origin_mm[a]) / vol.spacing_mm[a]));
            hi[a] = static_cast<int>(std::ceil((cc[a] + reach - vol.origin_mm[a]) / vol.spacing_mm[a]));
            if (lo[a] < 0 || hi[a] >= vol.extents[a])
                throw ConfigError("artery tube exits volume bounds during rasterization");
        }
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i2 = lo[0]; i2 <= hi[0]; ++i2) {
                    const Vec3 vc = vol.voxel_center(i2, j, k);
                    const double d = (vc - c).norm();
                    if (d > reach) continue;
                    double value;
                    if (d <= radius - falloff / 2) {
                        value = lumen_hu;
                    } else {
                        const double t = (d - (radius - falloff / 2)) / falloff;  // 0..1.5 -> edge
                        value = lumen_hu + (kBackgroundHu - lumen_hu) * std::clamp(t, 0.0, 1.0);
                    }
                    float& dst = vol.at(i2, j, k);
                    if (value > dst) dst = static_cast<float>(value);
                }
    }

    if (!geometry.calcifications.empty()) {
        const std::vector<Frame> frames = transport_frames(rs);
        for (const Calcification& calc : geometry.calcifications) {
            // Wall-touching ellipsoid at the given arc position and azimuth.
            const double s = std::clamp(calc.pos_mm, 0.0, (rs.points_mm.size() - 1) * 0.2);
            const std::size_t idx = std::min(static_cast<std::size_t>(s / 0.2), rs.points_mm.size() - 1);
            const double wall_r = lumen_radius_at(geometry, s);
            const Frame& f = frames[idx];
            const Vec3 center = rs.points_mm[idx] +
                                (f.normal * std::cos(calc.angle_rad) +
                                 f.binormal * std::sin(calc.angle_rad)) *
                                    wall_r;
            const double hu = std::clamp(calc.hu, 605.0, 1195.0);
            const double rmax = *std::max_element(calc.radii_mm.begin(), calc.radii_mm.end());
            int lo[3], hi[3];
            const double cc[3] = {center.x, center.y, center.z};
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::max(
                    0, static_cast<int>(std::floor((cc[a] - rmax - falloff - vol.origin_mm[a]) /
                                                   vol.spacing_mm[a])));
                hi[a] = std::min(vol.extents[a] - 1,
                                 static_cast<int>(std::ceil((cc[a] + rmax + falloff - vol.origin_mm[a]) /
                                                            vol.spacing_mm[a])));
            }
            for (int k = lo[2]; k <= hi[2]; ++k)
                for (int j = lo[1]; j <= hi[1]; ++j)
                    for (int i2 = lo[0]; i2 <= hi[0]; ++i2) {
                        const Vec3 vc = vol.voxel_center(i2, j, k);
                        const Vec3 d = vc - center;
                        const double q = std::sqrt((d.x / calc.radii_mm[0]) * (d.x / calc.radii_mm[0]) +
                                                   (d.y / calc.radii_mm[1]) * (d.y / calc.radii_mm[1]) +
                                                   (d.z / calc.radii_mm[2]) * (d.z / calc.radii_mm[2]));
                        if (q > 1.2) continue;
                        const double value = q <= 0.8 ? hu : hu + (kBackgroundHu - hu) * (q - 0.8) / 0.4;
                        float& dst = vol.at(i2, j, k);
                        if (value > dst) dst = static_cast<float>(value);
                    }
        }
    }
}

CtVolume rasterize_artery(const Centerline& centerline, const ArteryGeometry& geometry,
                          double spacing_mm, double image_noise_sd, std::uint64_t noise_seed) {
    Vec3 bb_lo = centerline.points_mm.front(), bb_hi = bb_lo;
    for (const Vec3& p : centerline.points_mm) {
        bb_lo = {std::min(bb_lo.x, p.x), std::min(bb_lo.y, p.y), std::min(bb_lo.z, p.z)};
        bb_hi = {std::max(bb_hi.x, p.x), std::max(bb_hi.y, p.y), std::max(bb_hi.z, p.z)};
    }
    const double margin = std::max(kVolumeMarginMm, 2.0 * geometry.lumen_radius_mm + 2.0);
    CtVolume vol;
    vol.spacing_mm = {spacing_mm, spacing_mm, spacing_mm};
    const double lo[3] = {bb_lo.x, bb_lo.y, bb_lo.z};
    const double hi[3] = {bb_hi.x, bb_hi.y, bb_hi.z};
    for (int a = 0; a < 3; ++a) {
        vol.origin_mm[a] = lo[a] - margin;
        vol.extents[a] = static_cast<int>(std::ceil((hi[a] + margin - vol.origin_mm[a]) / spacing_mm)) + 1;
    }
    vol.allocate();
    rasterize_artery_into(vol, centerline, geometry, image_noise_sd, noise_seed);
    return vol;
}

namespace {

ArteryGeometry draw_geometry(Rng& rng, const CohortSpec& spec) {
    ArteryGeometry g;
    g.length_points = spec.min_length_points +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                          spec.max_length_points - spec.min_length_points + 1)));
    g.lumen_radius_mm = rng.uniform(spec.lumen_radius_min, spec.lumen_radius_max);
    g.lumen_hu = rng.uniform(300.0, 400.0);

    const double len_mm = (g.length_points - 1) * MprVolume::kSpacingMm;
    const int n_sten = weighted_pick(rng, spec.stenosis_count_weights.data(), 4);
    for (int i = 0; i < n_sten; ++i) {
        Stenosis st;
        st.severity = rng.uniform(spec.severity_min, spec.severity_max);
        st.width_mm = rng.uniform(3.0, 7.0);
        st.pos_mm = rng.uniform(0.15, 0.85) * len_mm;
        g.stenoses.push_back(st);
    }
    // keep stenoses separated so severities stay locally identifiable
    std::sort(g.stenoses.begin(), g.stenoses.end(),
              [](const Stenosis& a, const Stenosis& b) { return a.pos_mm < b.pos_mm; });
    for (std::size_t i = 1; i < g.stenoses.size(); ++i) {
        const double min_gap = (g.stenoses[i - 1].width_mm + g.stenoses[i].width_mm) / 2 + 2.0;
        if (g.stenoses[i].pos_mm - g.stenoses[i - 1].pos_mm < min_gap)
            g.stenoses[i].pos_mm = std::min(g.stenoses[i - 1].pos_mm + min_gap, 0.9 * len_mm);
    }

    const int n_calc = rng.uniform() < spec.mean_calcifications
                           ? 1 + static_cast<int>(rng.below(2))
                           : 0;
    for (int i = 0; i < n_calc; ++i) {
        Calcification c;
        c.pos_mm = rng.uniform(0.1, 0.9) * len_mm;
        c.angle_rad = rng.uniform(0.0, 2 * 3.141592653589793);
        c.radii_mm = {rng.uniform(0.5, 1.4), rng.uniform(0.5, 1.4), rng.uniform(0.6, 1.8)};
        c.hu = rng.uniform(650.0, 1150.0);
        g.calcifications.push_back(c);
    }
    return g;
}

std::vector<VesselLabel> draw_vessels(Rng& rng, int count) {
    // Weighted draw without replacement; LAD most common.
    std::vector<VesselLabel> pool{VesselLabel::LAD, VesselLabel::LCX, VesselLabel::RCA};
    std::vector<double> w{0.54, 0.27, 0.19};
    std::vector<VesselLabel> out;
    for (int i = 0; i < count; ++i) {
        const int pick = weighted_pick(rng, w.data(), static_cast<int>(w.size()));
        out.push_back(pool[static_cast<std::size_t>(pick)]);
        pool.erase(pool.begin() + pick);
        w.erase(w.begin() + pick);
    }
    return out;
}

}  // namespace

std::vector<ArteryRecord> generate_cohort(const CohortSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<ArteryRecord> records;
    Rng plan_rng(derive_seed(seed, 0));

    struct PatientPlan {
        std::string id;
        CohortRole role;
        int arteries;
    };
    std::vector<PatientPlan> plan;
    for (int p = 0; p < spec.ae_patients; ++p) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "ae%03d", p);
        plan.push_back({buf, CohortRole::Autoencoder,
                        1 + weighted_pick(plan_rng, spec.arteries_per_patient_weights.data(), 3)});
    }
    std::vector<std::size_t> labeled_idx;
    for (int p = 0; p < spec.labeled_patients; ++p) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "pt%03d", p);
        labeled_idx.push_back(plan.size());
        plan.push_back({buf, CohortRole::Labeled,
                        1 + weighted_pick(plan_rng, spec.arteries_per_patient_weights.data(), 3)});
    }

    if (spec.labeled_arteries_total > 0) {
        // Adjust to an exact artery total, keeping 1..3 per patient.
        int total = 0;
        for (std::size_t i : labeled_idx) total += plan[i].arteries;
        while (total > spec.labeled_arteries_total) {
            const std::size_t i = labeled_idx[plan_rng.below(labeled_idx.size())];
            if (plan[i].arteries > 1) {
                --plan[i].arteries;
                --total;
            }
        }
        while (total < spec.labeled_arteries_total) {
            const std::size_t i = labeled_idx[plan_rng.below(labeled_idx.size())];
            if (plan[i].arteries < 3) {
                ++plan[i].arteries;
                ++total;
            }
        }
    }

    std::uint64_t artery_counter = 1;
    for (const PatientPlan& pp : plan) {
        Rng patient_rng(derive_seed(seed, 1000 + artery_counter));
        const std::vector<VesselLabel> vessels = draw_vessels(patient_rng, pp.arteries);
        for (int a = 0; a < pp.arteries; ++a) {
            ArteryRecord rec;
            rec.patient_id = pp.id;
            rec.cohort = pp.role;
            rec.vessel = vessels[static_cast<std::size_t>(a)];
            rec.artery_id = pp.id + "_" + to_string(rec.vessel);
            rec.seed = derive_seed(seed, 100000 + artery_counter);
            Rng geo_rng(rec.seed);
            rec.geometry = draw_geometry(geo_rng, spec);
            rec.geometry.label_noise =
                spec.label_noise_sd > 0 ? geo_rng.normal(0, spec.label_noise_sd) : 0.0;
            rec.ffr = compute_surrogate_ffr(rec.geometry.stenoses, rec.geometry.label_noise);
            records.push_back(std::move(rec));
            ++artery_counter;
        }
    }
    return records;
}

Centerline synthesize_centerline(const ArteryRecord& record) {
    return make_phantom_centerline(record.geometry, derive_seed(record.seed, 1),
                                   record.artery_id, record.patient_id);
}

CtVolume synthesize_volume(const ArteryRecord& record, const CohortSpec& spec) {
    const Centerline c = synthesize_centerline(record);
    return rasterize_artery(c, record.geometry, spec.spacing_mm, spec.image_noise_sd,
                            derive_seed(record.seed, 2));
}

ordered_json record_to_json(const ArteryRecord& r) {
    ordered_json j;
    j["artery_id"] = r.artery_id;
    j["patient_id"] = r.patient_id;
    j["cohort"] = to_string(r.cohort);
    j["vessel"] = to_string(r.vessel);
    if (r.ffr)
        j["ffr"] = *r.ffr;
    else
        j["ffr"] = nullptr;
    j["seed"] = r.seed;
    j["vol"] = r.vol_path;
    j["centerline"] = r.centerline_path;
    ordered_json g;
    g["lumen_radius_mm"] = r.geometry.lumen_radius_mm;
    g["length_points"] = r.geometry.length_points;
    g["lumen_hu"] = r.geometry.lumen_hu;
    g["label_noise"] = r.geometry.label_noise;
    ordered_json sj = ordered_json::array();
    for (const Stenosis& s : r.geometry.stenoses)
        sj.push_back({{"pos_mm", s.pos_mm}, {"severity", s.severity}, {"width_mm", s.width_mm}});
    g["stenoses"] = sj;
    ordered_json cj = ordered_json::array();
    for (const Calcification& c : r.geometry.calcifications)
        cj.push_back({{"pos_mm", c.pos_mm},
                      {"angle_rad", c.angle_rad},
                      {"radii_mm", c.radii_mm},
                      {"hu", c.hu}});
    g["calcifications"] = cj;
    j["geometry"] = g;
    return j;
}

ArteryRecord record_from_json(const json& j) {
    ArteryRecord r;
    r.artery_id = j.at("artery_id").get<std::string>();
    r.patient_id = j.at("patient_id").get<std::string>();
    r.cohort = cohort_from_string(j.at("cohort").get<std::string>());
    r.vessel = vessel_from_string(j.at("vessel").get<std::string>());
    if (j.contains("ffr") && !j.at("ffr").is_null()) r.ffr = j.at("ffr").get<double>();
    r.seed = j.value("seed", 0ULL);
    r.vol_path = j.value("vol", "");
    r.centerline_path = j.value("centerline", "");
    if (j.contains("geometry")) {
        const json& g = j.at("geometry");
        r.geometry.lumen_radius_mm = g.value("lumen_radius_mm", 1.6);
        r.geometry.length_points = g.value("length_points", 0);
        r.geometry.lumen_hu = g.value("lumen_hu", 350.0);
        r.geometry.label_noise = g.value("label_noise", 0.0);
        if (g.contains("stenoses"))
            for (const auto& sj : g.at("stenoses"))
                r.geometry.stenoses.push_back({sj.at("pos_mm").get<double>(),
                                               sj.at("severity").get<double>(),
                                               sj.at("width_mm").get<double>()});
        if (g.contains("calcifications"))
            for (const auto& cj : g.at("calcifications"))
                r.geometry.calcifications.push_back(
                    {cj.at("pos_mm").get<double>(), cj.at("angle_rad").get<double>(),
                     cj.at("radii_mm").get<std::array<double, 3>>(), cj.at("hu").get<double>()});
    }
    return r;
}

ordered_json cohort_spec_to_json(const CohortSpec& spec) {
    ordered_json j;
    j["ae_patients"] = spec.ae_patients;
    j["labeled_patients"] = spec.labeled_patients;
    j["labeled_arteries_total"] = spec.labeled_arteries_total;
    j["arteries_per_patient_weights"] = spec.arteries_per_patient_weights;
    j["min_length_points"] = spec.min_length_points;
    j["max_length_points"] = spec.max_length_points;
    j["stenosis_count_weights"] = spec.stenosis_count_weights;
    j["severity_min"] = spec.severity_min;
    j["severity_max"] = spec.severity_max;
    j["image_noise_sd"] = spec.image_noise_sd;
    j["label_noise_sd"] = spec.label_noise_sd;
    j["spacing_mm"] = spec.spacing_mm;
    j["lumen_radius_min"] = spec.lumen_radius_min;
    j["lumen_radius_max"] = spec.lumen_radius_max;
    j["mean_calcifications"] = spec.mean_calcifications;
    return j;
}

CohortSpec cohort_spec_from_json(const json& j) {
    CohortSpec s;
    s.ae_patients = j.value("ae_patients", s.ae_patients);
    s.labeled_patients = j.value("labeled_patients", s.labeled_patients);
    s.labeled_arteries_total = j.value("labeled_arteries_total", s.labeled_arteries_total);
    if (j.contains("arteries_per_patient_weights"))
        s.arteries_per_patient_weights = j.at("arteries_per_patient_weights").get<std::array<double, 3>>();
    s.min_length_points = j.value("min_length_points", s.min_length_points);
    s.max_length_points = j.value("max_length_points", s.max_length_points);
    if (j.contains("stenosis_count_weights"))
        s.stenosis_count_weights = j.at("stenosis_count_weights").get<std::array<double, 4>>();
    s.severity_min = j.value("severity_min", s.severity_min);
    s.severity_max = j.value("severity_max", s.severity_max);
    s.image_noise_sd = j.value("image_noise_sd", s.image_noise_sd);
    s.label_noise_sd = j.value("label_noise_sd", s.label_noise_sd);
    s.spacing_mm = j.value("spacing_mm", s.spacing_mm);
    s.lumen_radius_min = j.value("lumen_radius_min", s.lumen_radius_min);
    s.lumen_radius_max = j.value("lumen_radius_max", s.lumen_radius_max);
    s.mean_calcifications = j.value("mean_calcifications", s.mean_calcifications);
    return s;
}

void write_manifest(const std::string& path, const CohortSpec& spec, std::uint64_t seed,
                    const std::vector<ArteryRecord>& records) {
    ordered_json j;
    j["format"] = "artenc-cohort";
    j["version"] = 1;
    j["seed"] = seed;
    j["spec"] = cohort_spec_to_json(spec);
    ordered_json arr = ordered_json::array();
    for (const ArteryRecord& r : records) arr.push_back(record_to_json(r));
    j["arteries"] = arr;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

std::vector<ArteryRecord> read_manifest(const std::string& path, CohortSpec* spec_out,
                                        std::uint64_t* seed_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("manifest is not valid JSON: " + path);
    if (j.value("format", "") != "artenc-cohort")
        throw IoError("not a cohort manifest: " + path);
    if (spec_out && j.contains("spec")) *spec_out = cohort_spec_from_json(j.at("spec"));
    if (seed_out) *seed_out = j.value("seed", 0ULL);
    std::vector<ArteryRecord> records;
    for (const auto& rj : j.at("arteries")) records.push_back(record_from_json(rj));
    return records;
}

}  // namespace artenc
