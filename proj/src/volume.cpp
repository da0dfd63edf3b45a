#include "artenc/volume.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace artenc {

using nlohmann::json;
using nlohmann::ordered_json;

float CtVolume::sample(const Vec3& p_mm, float fill) const {
    const double fx = (p_mm.x - origin_mm[0]) / spacing_mm[0];
    const double fy = (p_mm.y - origin_mm[1]) / spacing_mm[1];
    const double fz = (p_mm.z - origin_mm[2]) / spacing_mm[2];
    if (fx < 0 || fy < 0 || fz < 0 || fx > extents[0] - 1 || fy > extents[1] - 1 ||
        fz > extents[2] - 1)
        return fill;
    const int i0 = std::min(static_cast<int>(fx), extents[0] - 2 >= 0 ? extents[0] - 2 : 0);
    const int j0 = std::min(static_cast<int>(fy), extents[1] - 2 >= 0 ? extents[1] - 2 : 0);
    const int k0 = std::min(static_cast<int>(fz), extents[2] - 2 >= 0 ? extents[2] - 2 : 0);
    const double tx = fx - i0, ty = fy - j0, tz = fz - k0;

    auto v = [&](int di, int dj, int dk) -> double {
        const int i = std::min(i0 + di, extents[0] - 1);
        const int j = std::min(j0 + dj, extents[1] - 1);
        const int k = std::min(k0 + dk, extents[2] - 1);
        return static_cast<double>(at(i, j, k));
    };

    const double c00 = v(0, 0, 0) * (1 - tx) + v(1, 0, 0) * tx;
    const double c10 = v(0, 1, 0) * (1 - tx) + v(1, 1, 0) * tx;
    const double c01 = v(0, 0, 1) * (1 - tx) + v(1, 0, 1) * tx;
    const double c11 = v(0, 1, 1) * (1 - tx) + v(1, 1, 1) * tx;
    const double c0 = c00 * (1 - ty) + c10 * ty;
    const double c1 = c01 * (1 - ty) + c11 * ty;
    return static_cast<float>(c0 * (1 - tz) + c1 * tz);
}

void CtVolume::validate() const {
    for (int e : extents)
        if (e <= 0) throw ConfigError("volume extents must be positive");
    for (double s : spacing_mm)
        if (s <= 0) throw ConfigError("volume spacing must be strictly positive");
    if (voxels.size() != size())
        throw ConfigError("voxel count does not match extents");
}

namespace {

void write_header_and_block(const std::string& path, const ordered_json& hdr,
                            const float* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write volume: " + path);
    const std::string hs = hdr.dump();
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.put('\n');
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw IoError("short write on volume: " + path);
}

json read_header_line(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("cannot read volume header: " + path);
    json hdr = json::parse(line, nullptr, false);
    if (hdr.is_discarded()) throw IoError("volume header is not valid JSON: " + path);
    return hdr;
}

void require_field(const json& hdr, const char* field, const std::string& path) {
    if (!hdr.contains(field))
        throw IoError("volume header missing field '" + std::string(field) + "': " + path);
}

void read_block(std::ifstream& in, const std::string& path, float* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
        throw IoError("truncated voxel block: " + path);
}

}  // namespace

void write_vol(const std::string& path, const CtVolume& vol) {
    vol.validate();
    ordered_json hdr;
    hdr["format"] = "vol";
    hdr["version"] = 1;
    hdr["kind"] = "ct";
    hdr["extents"] = vol.extents;
    hdr["spacing_mm"] = vol.spacing_mm;
    hdr["origin_mm"] = vol.origin_mm;
    hdr["dtype"] = "f32le";
    write_header_and_block(path, hdr, vol.voxels.data(), vol.voxels.size());
}

CtVolume read_vol(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open volume: " + path);
    json hdr = read_header_line(in, path);
    for (const char* f : {"format", "kind", "extents", "spacing_mm", "origin_mm", "dtype"})
        require_field(hdr, f, path);
    if (hdr.at("dtype").get<std::string>() != "f32le")
        throw IoError("unsupported dtype in volume: " + path);
    CtVolume vol;
    auto e = hdr.at("extents").get<std::vector<int>>();
    auto s = hdr.at("spacing_mm").get<std::vector<double>>();
    auto o = hdr.at("origin_mm").get<std::vector<double>>();
    if (e.size() != 3 || s.size() != 3 || o.size() != 3)
        throw IoError("volume header extents/spacing/origin must have 3 entries: " + path);
    std::copy(e.begin(), e.end(), vol.extents.begin());
    std::copy(s.begin(), s.end(), vol.spacing_mm.begin());
    std::copy(o.begin(), o.end(), vol.origin_mm.begin());
    for (double sp : vol.spacing_mm)
        if (sp <= 0) throw IoError("volume spacing must be positive: " + path);
    vol.allocate();
    read_block(in, path, vol.voxels.data(), vol.voxels.size());
    return vol;
}

void write_mpr_vol(const std::string& path, const MprVolume& mpr) {
    ordered_json hdr;
    hdr["format"] = "vol";
    hdr["version"] = 1;
    hdr["kind"] = "mpr";
    hdr["extents"] = std::array<int, 3>{MprVolume::kCross, MprVolume::kCross, mpr.length};
    hdr["spacing_mm"] = std::array<double, 3>{MprVolume::kSpacingMm, MprVolume::kSpacingMm,
                                              MprVolume::kSpacingMm};
    hdr["origin_mm"] = std::array<double, 3>{0, 0, 0};
    hdr["dtype"] = "f32le";
    hdr["artery_id"] = mpr.artery_id;
    hdr["truncated"] = mpr.truncated;
    ordered_json pts = ordered_json::array();
    ordered_json frames = ordered_json::array();
    for (int s = 0; s < mpr.length; ++s) {
        const Vec3& p = mpr.points_mm[static_cast<std::size_t>(s)];
        pts.push_back({p.x, p.y, p.z});
        const Frame& f = mpr.frames[static_cast<std::size_t>(s)];
        frames.push_back({{f.tangent.x, f.tangent.y, f.tangent.z},
                          {f.normal.x, f.normal.y, f.normal.z},
                          {f.binormal.x, f.binormal.y, f.binormal.z}});
    }
    hdr["points_mm"] = pts;
    hdr["frames"] = frames;
    write_header_and_block(path, hdr, mpr.data.data(), mpr.data.size());
}

MprVolume read_mpr_vol(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open volume: " + path);
    json hdr = read_header_line(in, path);
    for (const char* f : {"format", "kind", "extents", "dtype", "frames", "points_mm"})
        require_field(hdr, f, path);
    if (hdr.at("kind").get<std::string>() != "mpr")
        throw IoError("expected an mpr volume: " + path);
    auto e = hdr.at("extents").get<std::vector<int>>();
    if (e.size() != 3 || e[0] != MprVolume::kCross || e[1] != MprVolume::kCross)
        throw IoError("mpr cross-section must be 40x40: " + path);
    MprVolume mpr;
    mpr.length = e[2];
    mpr.artery_id = hdr.value("artery_id", "");
    mpr.truncated = hdr.value("truncated", false);
    for (const auto& pj : hdr.at("points_mm"))
        mpr.points_mm.push_back({pj.at(0).get<double>(), pj.at(1).get<double>(), pj.at(2).get<double>()});
    for (const auto& fj : hdr.at("frames")) {
        Frame f;
        f.tangent = {fj.at(0).at(0).get<double>(), fj.at(0).at(1).get<double>(), fj.at(0).at(2).get<double>()};
        f.normal = {fj.at(1).at(0).get<double>(), fj.at(1).at(1).get<double>(), fj.at(1).at(2).get<double>()};
        f.binormal = {fj.at(2).at(0).get<double>(), fj.at(2).at(1).get<double>(), fj.at(2).at(2).get<double>()};
        mpr.frames.push_back(f);
    }
    if (static_cast<int>(mpr.points_mm.size()) != mpr.length ||
        static_cast<int>(mpr.frames.size()) != mpr.length)
        throw IoError("mpr frame/point count does not match length: " + path);
    mpr.data.resize(static_cast<std::size_t>(MprVolume::kCross) * MprVolume::kCross *
                    static_cast<std::size_t>(mpr.length));
    read_block(in, path, mpr.data.data(), mpr.data.size());
    return mpr;
}

nlohmann::json read_vol_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open volume: " + path);
    return read_header_line(in, path);
}

void Centerline::validate() const {
    if (points_mm.size() < 2) throw ConfigError("centerline needs at least 2 points");
    for (std::size_t i = 1; i < points_mm.size(); ++i)
        if ((points_mm[i] - points_mm[i - 1]).norm() == 0.0)
            throw ConfigError("centerline has coincident consecutive points");
}

double Centerline::polyline_length() const {
    double len = 0;
    for (std::size_t i = 1; i < points_mm.size(); ++i)
        len += (points_mm[i] - points_mm[i - 1]).norm();
    return len;
}

void write_centerline_csv(const std::string& path, const Centerline& c) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write centerline: " + path);
    out << "x_mm,y_mm,z_mm\n";
    out.precision(17);
    for (const Vec3& p : c.points_mm) out << p.x << ',' << p.y << ',' << p.z << '\n';
    if (!out) throw IoError("short write on centerline: " + path);
}

Centerline read_centerline_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open centerline: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("x_mm,y_mm,z_mm", 0) != 0)
        throw IoError("centerline CSV must start with header x_mm,y_mm,z_mm: " + path);
    Centerline c;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        Vec3 p;
        double* comp[3] = {&p.x, &p.y, &p.z};
        for (int i = 0; i < 3; ++i) {
            if (!std::getline(ss, tok, ',')) throw IoError("malformed centerline row: " + path);
            *comp[i] = std::stod(tok);
        }
        c.points_mm.push_back(p);
    }
    c.validate();
    return c;
}

}  // namespace artenc
