#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "artenc/common.hpp"
#include "artenc/volume.hpp"

namespace artenc {

enum class VesselLabel { LAD, LCX, RCA };
enum class CohortRole { Autoencoder, Labeled };

std::string to_string(VesselLabel v);
VesselLabel vessel_from_string(const std::string& s);
std::string to_string(CohortRole r);
CohortRole cohort_from_string(const std::string& s);

struct Stenosis {
    double pos_mm = 0;    // arc-length position of the narrowing center
    double severity = 0;  // area-reduction fraction in [0, 1)
    double width_mm = 5;
};

struct Calcification {
    double pos_mm = 0;
    double angle_rad = 0;  // azimuth around the wall
    std::array<double, 3> radii_mm{0.8, 0.8, 0.8};
    double hu = 900;
};

// Ground-truth construction record, retained for oracle tests.
struct ArteryGeometry {
    double lumen_radius_mm = 1.6;
    int length_points = 200;  // target centerline points after 0.3 mm resampling
    double lumen_hu = 350;    // contrast level, [300, 400]
    std::vector<Stenosis> stenoses;
    std::vector<Calcification> calcifications;
    double label_noise = 0;  // stored draw, not re-drawn
};

struct ArteryRecord {
    std::string artery_id;
    std::string patient_id;
    CohortRole cohort = CohortRole::Labeled;
    VesselLabel vessel = VesselLabel::LAD;
    std::optional<double> ffr;
    std::uint64_t seed = 0;  // per-artery stream for centerline/volume synthesis
    std::string vol_path;
    std::string centerline_path;
    ArteryGeometry geometry;
};

struct CohortSpec {
    int ae_patients = 10;
    int labeled_patients = 20;
    int labeled_arteries_total = 0;  // 0 = draw freely from the per-patient weights
    std::array<double, 3> arteries_per_patient_weights{0.55, 0.30, 0.15};
    int min_length_points = 100;
    int max_length_points = 800;
    std::array<double, 4> stenosis_count_weights{0.10, 0.30, 0.40, 0.20};
    double severity_min = 0.25;
    double severity_max = 0.85;
    double image_noise_sd = 12.0;
    double label_noise_sd = 0.02;
    double spacing_mm = 0.45;
    double lumen_radius_min = 1.3;
    double lumen_radius_max = 2.0;
    double mean_calcifications = 0.7;

    void validate() const;

    static CohortSpec tiny();
    static CohortSpec paper_scale();
};

// FFR surrogate: clamp(1 - 0.45 * sum(severity^2) + noise, 0.3, 1.0).
// Monotone non-increasing in every severity before noise.
double compute_surrogate_ffr(const std::vector<Stenosis>& stenoses, double noise = 0.0);

// Smooth bounded-curvature centerline for one artery; total spline arc
// length is exactly (length_points - 1) * 0.3 mm.
Centerline make_phantom_centerline(const ArteryGeometry& geometry, std::uint64_t seed,
                                   const std::string& artery_id, const std::string& patient_id);

// Stamps the lumen tube (smooth one-voxel falloff) and wall
// calcifications into a pre-sized volume. Throws if the tube plus
// falloff would leave the volume.
void rasterize_artery_into(CtVolume& vol, const Centerline& centerline,
                           const ArteryGeometry& geometry, double image_noise_sd,
                           std::uint64_t noise_seed);

// Sizes a volume around the centerline (>= 8 mm margin) and rasterizes.
CtVolume rasterize_artery(const Centerline& centerline, const ArteryGeometry& geometry,
                          double spacing_mm, double image_noise_sd, std::uint64_t noise_seed);

// Deterministic cohort of labeled and autoencoder-only arteries.
// Volumes are not materialized here; use the per-record synthesis
// functions below.
std::vector<ArteryRecord> generate_cohort(const CohortSpec& spec, std::uint64_t seed);

Centerline synthesize_centerline(const ArteryRecord& record);
CtVolume synthesize_volume(const ArteryRecord& record, const CohortSpec& spec);

// Lumen radius profile at an arc position, given the stenoses.
double lumen_radius_at(const ArteryGeometry& geometry, double s_mm);

nlohmann::ordered_json record_to_json(const ArteryRecord& r);
ArteryRecord record_from_json(const nlohmann::json& j);

void write_manifest(const std::string& path, const CohortSpec& spec, std::uint64_t seed,
                    const std::vector<ArteryRecord>& records);
std::vector<ArteryRecord> read_manifest(const std::string& path, CohortSpec* spec_out = nullptr,
                                        std::uint64_t* seed_out = nullptr);

nlohmann::ordered_json cohort_spec_to_json(const CohortSpec& spec);
CohortSpec cohort_spec_from_json(const nlohmann::json& j);

}  // namespace artenc
