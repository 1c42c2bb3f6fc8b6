#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pg {

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

inline double squared_dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int> label;

    std::size_t size() const { return points.size(); }
};

// Axis-aligned bounding box.
struct Bounds {
    Vec3 lo;
    Vec3 hi;
};

Bounds bounding_box(const PointCloud& cloud);

// Symmetric Chamfer distance (mean of squared nearest-neighbor distances,
// both directions). Brute force; desk-scale clouds only.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// Binary format: magic "PGPC", u32 point count, then count little-endian
// f32 (x,y,z) triples. Text format: one "x y z" line per point.
void save_cloud_binary(const PointCloud& cloud, const std::string& path);
PointCloud load_cloud_binary(const std::string& path);
void save_cloud_text(const PointCloud& cloud, const std::string& path);
PointCloud load_cloud_text(const std::string& path);

} // namespace pg
