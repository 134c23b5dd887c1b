#include "uvga/ply.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "uvga/serialize.hpp"

namespace uvga {

namespace {

Vec3 frame_normal(const Quat& q) {
    Mat3 r = to_mat3(q);
    return r.col[2];
}

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", double(v));
    return buf;
}

}  // namespace

void export_ply(const GaussianSet& set, const std::string& path) {
    std::ostringstream os;
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << set.size() << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) os << "property float " << p << "\n";
    for (const char* p : {"red", "green", "blue"}) os << "property uchar " << p << "\n";
    for (const char* p : {"opacity", "scale_x", "scale_y", "scale_z"})
        os << "property float " << p << "\n";
    os << "end_header\n";

    for (const Gaussian& g : set) {
        Vec3 n = frame_normal(g.rot);
        os << fmt_float(g.mu.x) << " " << fmt_float(g.mu.y) << " " << fmt_float(g.mu.z) << " "
           << fmt_float(n.x) << " " << fmt_float(n.y) << " " << fmt_float(n.z) << " "
           << int(std::lround(clampf(g.color.x, 0.f, 1.f) * 255.f)) << " "
           << int(std::lround(clampf(g.color.y, 0.f, 1.f) * 255.f)) << " "
           << int(std::lround(clampf(g.color.z, 0.f, 1.f) * 255.f)) << " "
           << fmt_float(g.alpha) << " " << fmt_float(g.scale.x) << " " << fmt_float(g.scale.y)
           << " " << fmt_float(g.scale.z) << "\n";
    }
    atomic_write_file(path, os.str());
}

GaussianSet import_ply(const std::string& path) {
    std::ifstream is = open_input(path);
    std::string line;
    size_t count = 0;
    bool header_done = false;
    while (std::getline(is, line)) {
        if (line.rfind("element vertex", 0) == 0) count = size_t(std::stoul(line.substr(15)));
        if (line == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) throw std::runtime_error(path + ": missing PLY header terminator");

    GaussianSet set;
    set.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        Gaussian g;
        Vec3 n;
        int r, gb, b;
        if (!(is >> g.mu.x >> g.mu.y >> g.mu.z >> n.x >> n.y >> n.z >> r >> gb >> b >> g.alpha >>
              g.scale.x >> g.scale.y >> g.scale.z))
            throw std::runtime_error(path + ": truncated vertex data");
        g.color = Vec3{float(r) / 255.f, float(gb) / 255.f, float(b) / 255.f};

        n = normalized(n);
        Vec3 t = std::fabs(n.x) < 0.9f ? cross(n, Vec3{1, 0, 0}) : cross(n, Vec3{0, 1, 0});
        t = normalized(t);
        g.rot = mat3_to_quat(Mat3::from_cols(t, cross(n, t), n));
        set.push_back(g);
    }
    return set;
}

}  // namespace uvga
