#include "purgegate/point_cloud.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "purgegate/errors.hpp"

namespace pg {

Bounds bounding_box(const PointCloud& cloud) {
    if (cloud.points.empty()) throw std::invalid_argument("bounding_box: empty cloud");
    Bounds b{cloud.points.front(), cloud.points.front()};
    for (const auto& p : cloud.points) {
        for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], p[a]);
            b.hi[a] = std::max(b.hi[a], p[a]);
        }
    }
    return b;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    if (a.points.empty() || b.points.empty())
        throw std::invalid_argument("chamfer_distance: empty cloud");
    auto one_way = [](const PointCloud& from, const PointCloud& to) {
        double total = 0.0;
        for (const auto& p : from.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to.points) best = std::min(best, squared_dist(p, q));
            total += best;
        }
        return total / static_cast<double>(from.points.size());
    };
    return one_way(a, b) + one_way(b, a);
}

namespace {
constexpr char kMagic[4] = {'P', 'G', 'P', 'C'};
}

void save_cloud_binary(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out.write(kMagic, 4);
    const std::uint32_t n = static_cast<std::uint32_t>(cloud.points.size());
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& p : cloud.points) {
        const float xyz[3] = {static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    if (!out) throw IoError("write failed: " + path);
}

PointCloud load_cloud_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad PGPC magic: " + path);
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 4);
    if (!in) throw FormatError("truncated PGPC header: " + path);
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        float xyz[3];
        in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
        if (!in) throw FormatError("truncated PGPC payload: " + path);
        cloud.points.push_back({xyz[0], xyz[1], xyz[2]});
    }
    return cloud;
}

void save_cloud_text(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    out.precision(9);
    for (const auto& p : cloud.points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    if (!out) throw IoError("write failed: " + path);
}

PointCloud load_cloud_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    PointCloud cloud;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p[0] >> p[1] >> p[2])) throw FormatError("bad point line in " + path + ": '" + line + "'");
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
            throw FormatError("non-finite coordinate in " + path);
        cloud.points.push_back(p);
    }
    return cloud;
}

} // namespace pg
