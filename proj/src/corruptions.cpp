#include "purgegate/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "purgegate/rng.hpp"

namespace pg {

namespace {

const std::vector<std::pair<CorruptionKind, const char*>>& kind_table() {
    static const std::vector<std::pair<CorruptionKind, const char*>> table = {
        {CorruptionKind::none, "none"},
        {CorruptionKind::uniform, "uniform"},
        {CorruptionKind::gaussian, "gaussian"},
        {CorruptionKind::background, "background"},
        {CorruptionKind::impulse, "impulse"},
        {CorruptionKind::upsampling, "upsampling"},
        {CorruptionKind::density_dec, "density_dec"},
        {CorruptionKind::density_inc, "density_inc"},
        {CorruptionKind::cutout, "cutout"},
        {CorruptionKind::rotation, "rotation"},
        {CorruptionKind::shear, "shear"},
        {CorruptionKind::distortion, "distortion"},
    };
    return table;
}

// k distinct indices in [0, n), uniform, order of selection.
std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(n - i)]);
    pool.resize(k);
    return pool;
}

// Indices of the m points nearest to a random anchor point (a contiguous
// surface patch).
std::vector<std::size_t> knn_patch(const PointCloud& cloud, Rng& rng, std::size_t m) {
    const std::size_t anchor = rng.index(cloud.size());
    const Vec3& c = cloud.points[anchor];
    std::vector<std::size_t> order(cloud.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double da = squared_dist(cloud.points[a], c);
                          const double db = squared_dist(cloud.points[b], c);
                          return da != db ? da < db : a < b;
                      });
    order.resize(m);
    return order;
}

void drop_indices(PointCloud& cloud, std::vector<std::size_t> to_drop) {
    std::sort(to_drop.begin(), to_drop.end());
    to_drop.erase(std::unique(to_drop.begin(), to_drop.end()), to_drop.end());
    std::vector<Vec3> kept;
    kept.reserve(cloud.size() - to_drop.size());
    std::size_t di = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (di < to_drop.size() && to_drop[di] == i) {
            ++di;
            continue;
        }
        kept.push_back(cloud.points[i]);
    }
    cloud.points = std::move(kept);
}

} // namespace

const std::vector<CorruptionKind>& all_corruption_kinds() {
    static const std::vector<CorruptionKind> kinds = [] {
        std::vector<CorruptionKind> v;
        for (const auto& [k, n] : kind_table()) v.push_back(k);
        return v;
    }();
    return kinds;
}

std::string corruption_name(CorruptionKind kind) {
    for (const auto& [k, n] : kind_table())
        if (k == kind) return n;
    throw std::invalid_argument("unknown corruption kind");
}

CorruptionKind corruption_from_name(const std::string& name) {
    for (const auto& [k, n] : kind_table())
        if (name == n) return k;
    throw std::invalid_argument("unknown corruption name: " + name);
}

PointCloud apply_corruption(const PointCloud& cloud, const CorruptionSpec& spec) {
    if (cloud.points.empty()) throw std::invalid_argument("apply_corruption: empty cloud");
    if (spec.severity < 1 || spec.severity > 5)
        throw std::invalid_argument("apply_corruption: severity must be in [1, 5]");

    const double s = static_cast<double>(spec.severity);
    const std::size_t n = cloud.size();
    Rng rng(spec.rng_seed);
    PointCloud out = cloud;

    switch (spec.kind) {
    case CorruptionKind::none:
        break;
    case CorruptionKind::uniform: {
        const double a = 0.02 * s;
        for (auto& p : out.points)
            for (int ax = 0; ax < 3; ++ax) p[ax] += rng.uniform(-a, a);
        break;
    }
    case CorruptionKind::gaussian: {
        const double sigma = 0.01 * s;
        for (auto& p : out.points)
            for (int ax = 0; ax < 3; ++ax) p[ax] += rng.normal(0.0, sigma);
        break;
    }
    case CorruptionKind::background: {
        Bounds b = bounding_box(cloud);
        // scale the box about its center by 1.1
        for (int ax = 0; ax < 3; ++ax) {
            const double c = 0.5 * (b.lo[ax] + b.hi[ax]);
            const double h = 0.5 * (b.hi[ax] - b.lo[ax]) * 1.1;
            b.lo[ax] = c - h;
            b.hi[ax] = c + h;
        }
        const std::size_t added = 8 * static_cast<std::size_t>(spec.severity);
        for (std::size_t i = 0; i < added; ++i)
            out.points.push_back({rng.uniform(b.lo[0], b.hi[0]), rng.uniform(b.lo[1], b.hi[1]),
                                  rng.uniform(b.lo[2], b.hi[2])});
        break;
    }
    case CorruptionKind::impulse: {
        const std::size_t m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * 0.05 * s));
        for (const std::size_t i : sample_indices(rng, n, std::min(m, n)))
            for (int ax = 0; ax < 3; ++ax) out.points[i][ax] += (rng.uniform() < 0.5 ? -0.1 : 0.1);
        break;
    }
    case CorruptionKind::upsampling: {
        const std::size_t m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * 0.1 * s));
        for (const std::size_t i : sample_indices(rng, n, std::min(m, n))) {
            Vec3 p = cloud.points[i];
            for (int ax = 0; ax < 3; ++ax) p[ax] += rng.normal(0.0, 0.01);
            out.points.push_back(p);
        }
        break;
    }
    case CorruptionKind::density_dec: {
        const std::size_t m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * 0.06 * s));
        if (m + 1 >= n) throw std::invalid_argument("density_dec: cloud too small for severity");
        drop_indices(out, knn_patch(cloud, rng, m));
        break;
    }
    case CorruptionKind::density_inc: {
        const std::size_t m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * 0.1 * s));
        for (const std::size_t i : knn_patch(cloud, rng, std::min(m, n))) {
            Vec3 p = cloud.points[i];
            for (int ax = 0; ax < 3; ++ax) p[ax] += rng.normal(0.0, 0.01);
            out.points.push_back(p);
        }
        break;
    }
    case CorruptionKind::cutout: {
        PointCloud scratch = cloud;
        for (int patch = 0; patch < spec.severity; ++patch) {
            const std::size_t m = std::min<std::size_t>(16, scratch.size() - 1);
            if (m == 0) break;
            drop_indices(scratch, knn_patch(scratch, rng, m));
        }
        out.points = scratch.points;
        if (out.points.empty()) throw std::invalid_argument("cutout: cloud too small for severity");
        break;
    }
    case CorruptionKind::rotation: {
        const Vec3 axis = rng.unit_vector3();
        const double angle = s * 7.5 * (3.14159265358979323846 / 180.0);
        const double c = std::cos(angle), sn = std::sin(angle), omc = 1.0 - c;
        // Rodrigues rotation matrix
        const double r[3][3] = {
            {c + axis[0] * axis[0] * omc, axis[0] * axis[1] * omc - axis[2] * sn,
             axis[0] * axis[2] * omc + axis[1] * sn},
            {axis[1] * axis[0] * omc + axis[2] * sn, c + axis[1] * axis[1] * omc,
             axis[1] * axis[2] * omc - axis[0] * sn},
            {axis[2] * axis[0] * omc - axis[1] * sn, axis[2] * axis[1] * omc + axis[0] * sn,
             c + axis[2] * axis[2] * omc}};
        for (auto& p : out.points) {
            const Vec3 q = p;
            for (int i = 0; i < 3; ++i) p[i] = r[i][0] * q[0] + r[i][1] * q[1] + r[i][2] * q[2];
        }
        break;
    }
    case CorruptionKind::shear: {
        const double a = 0.05 * s;
        double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) m[i][j] = rng.uniform(-a, a);
        for (auto& p : out.points) {
            const Vec3 q = p;
            for (int i = 0; i < 3; ++i) p[i] = m[i][0] * q[0] + m[i][1] * q[1] + m[i][2] * q[2];
        }
        break;
    }
    case CorruptionKind::distortion: {
        // Smooth RBF warp: 5 Gaussian kernels of width 0.2, per-kernel random
        // displacement direction, amplitude 0.05 * severity.
        constexpr int kKernels = 5;
        constexpr double kWidth = 0.2;
        const double amplitude = 0.05 * s;
        const Bounds b = bounding_box(cloud);
        std::array<Vec3, kKernels> centers;
        std::array<Vec3, kKernels> dirs;
        for (int i = 0; i < kKernels; ++i) {
            centers[i] = {rng.uniform(b.lo[0], b.hi[0]), rng.uniform(b.lo[1], b.hi[1]),
                          rng.uniform(b.lo[2], b.hi[2])};
            dirs[i] = rng.unit_vector3();
        }
        for (auto& p : out.points) {
            for (int i = 0; i < kKernels; ++i) {
                const double w = std::exp(-squared_dist(p, centers[i]) / (2.0 * kWidth * kWidth));
                for (int ax = 0; ax < 3; ++ax) p[ax] += amplitude * w * dirs[i][ax];
            }
        }
        break;
    }
    }
    return out;
}

std::string describe_corruptions() {
    nlohmann::json doc;
    doc["severity_range"] = {1, 5};
    auto& kinds = doc["kinds"];
    kinds["none"] = "identity transform";
    kinds["uniform"] = "add U(-0.02*s, 0.02*s) per coordinate to every point";
    kinds["gaussian"] = "add N(0, (0.01*s)^2) per coordinate to every point";
    kinds["background"] = "append 8*s uniform points inside the 1.1-scaled bounding box";
    kinds["impulse"] = "displace a random ceil(N*0.05*s) subset by +-0.1 per axis";
    kinds["upsampling"] = "duplicate ceil(N*0.1*s) random points with N(0, 0.01^2) jitter";
    kinds["density_dec"] = "drop one contiguous KNN patch of ceil(N*0.06*s) points";
    kinds["density_inc"] = "densify one KNN patch of ceil(N*0.1*s) points by duplicating with jitter";
    kinds["cutout"] = "remove s KNN patches of 16 points each";
    kinds["rotation"] = "rotate by s*7.5 degrees about a random axis";
    kinds["shear"] = "apply a shear matrix with off-diagonals U(-0.05*s, 0.05*s)";
    kinds["distortion"] = "smooth RBF warp, 5 Gaussian kernels of width 0.2, amplitude 0.05*s";
    doc["point_count_effect"] = {
        {"preserving", {"none", "uniform", "gaussian", "impulse", "rotation", "shear", "distortion"}},
        {"adding", {"background", "upsampling", "density_inc"}},
        {"removing", {"density_dec", "cutout"}},
    };
    return doc.dump(2);
}

} // namespace pg
