#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "purgegate/corruptions.hpp"
#include "purgegate/dataset.hpp"
#include "purgegate/rng.hpp"

using namespace pg;

namespace {

PointCloud make_cloud(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud pc;
    pc.label = 2;
    for (std::size_t i = 0; i < n; ++i)
        pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return pc;
}

double max_pairwise_dist_change(const PointCloud& a, const PointCloud& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); i += 7)
        for (std::size_t j = i + 1; j < a.size(); j += 13) {
            const double da = std::sqrt(squared_dist(a.points[i], a.points[j]));
            const double db = std::sqrt(squared_dist(b.points[i], b.points[j]));
            worst = std::max(worst, std::abs(da - db));
        }
    return worst;
}

} // namespace

TEST_CASE("corruptions are deterministic and label-preserving") {
    const PointCloud pc = make_cloud(200, 1);
    for (const CorruptionKind kind : all_corruption_kinds()) {
        const CorruptionSpec spec{kind, 3, 42};
        const PointCloud a = apply_corruption(pc, spec);
        const PointCloud b = apply_corruption(pc, spec);
        REQUIRE(a.size() == b.size());
        CHECK(a.points == b.points);
        CHECK(a.label == pc.label);
        if (kind != CorruptionKind::none && kind != CorruptionKind::rotation) {
            const PointCloud c = apply_corruption(pc, {kind, 3, 43});
            CHECK(c.points != a.points);
        }
    }
}

TEST_CASE("none is the identity") {
    const PointCloud pc = make_cloud(64, 2);
    const PointCloud out = apply_corruption(pc, {CorruptionKind::none, 3, 7});
    CHECK(out.points == pc.points);
}

TEST_CASE("point counts follow each kind's rule") {
    const std::size_t n = 200;
    const PointCloud pc = make_cloud(n, 3);
    for (int s = 1; s <= 5; ++s) {
        CHECK(apply_corruption(pc, {CorruptionKind::uniform, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::gaussian, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::impulse, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::rotation, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::shear, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::distortion, s, 1}).size() == n);
        CHECK(apply_corruption(pc, {CorruptionKind::background, s, 1}).size() == n + 8 * static_cast<std::size_t>(s));
        const auto add = static_cast<std::size_t>(std::ceil(n * 0.1 * s));
        CHECK(apply_corruption(pc, {CorruptionKind::upsampling, s, 1}).size() == n + add);
        CHECK(apply_corruption(pc, {CorruptionKind::density_inc, s, 1}).size() == n + add);
        const auto drop = static_cast<std::size_t>(std::ceil(n * 0.06 * s));
        CHECK(apply_corruption(pc, {CorruptionKind::density_dec, s, 1}).size() == n - drop);
        CHECK(apply_corruption(pc, {CorruptionKind::cutout, s, 1}).size() == n - 16 * static_cast<std::size_t>(s));
    }
}

TEST_CASE("uniform noise respects its per-coordinate bound") {
    const PointCloud pc = make_cloud(300, 4);
    for (int s = 1; s <= 5; ++s) {
        const PointCloud out = apply_corruption(pc, {CorruptionKind::uniform, s, 9});
        double worst = 0.0;
        for (std::size_t i = 0; i < pc.size(); ++i)
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(out.points[i][c] - pc.points[i][c]));
        CHECK(worst <= 0.02 * s + 1e-12);
        CHECK(worst > 0.02 * s * 0.8); // the bound is actually approached
    }
}

TEST_CASE("background points land inside the 1.1-scaled bounding box") {
    const PointCloud pc = make_cloud(100, 5);
    const Bounds box = bounding_box(pc);
    const Vec3 mid = {(box.lo[0] + box.hi[0]) / 2, (box.lo[1] + box.hi[1]) / 2,
                      (box.lo[2] + box.hi[2]) / 2};
    const PointCloud out = apply_corruption(pc, {CorruptionKind::background, 5, 6});
    for (std::size_t i = pc.size(); i < out.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double half = (box.hi[c] - box.lo[c]) / 2 * 1.1;
            CHECK(out.points[i][c] >= mid[c] - half - 1e-12);
            CHECK(out.points[i][c] <= mid[c] + half + 1e-12);
        }
}

TEST_CASE("impulse displaces exactly its subset by 0.1 per axis") {
    const std::size_t n = 200;
    const PointCloud pc = make_cloud(n, 6);
    for (int s = 1; s <= 5; ++s) {
        const PointCloud out = apply_corruption(pc, {CorruptionKind::impulse, s, 8});
        std::size_t moved = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (out.points[i] == pc.points[i]) continue;
            ++moved;
            for (int c = 0; c < 3; ++c)
                CHECK(std::abs(std::abs(out.points[i][c] - pc.points[i][c]) - 0.1) < 1e-12);
        }
        CHECK(moved == static_cast<std::size_t>(std::ceil(n * 0.05 * s)));
    }
}

TEST_CASE("rotation is an isometry about the origin") {
    const PointCloud pc = make_cloud(150, 7);
    const PointCloud out = apply_corruption(pc, {CorruptionKind::rotation, 4, 11});
    CHECK(max_pairwise_dist_change(pc, out) < 1e-10);
    // norms preserved too (rotation about the origin)
    for (std::size_t i = 0; i < pc.size(); i += 10) {
        const double a = std::sqrt(squared_dist(pc.points[i], {0, 0, 0}));
        const double b = std::sqrt(squared_dist(out.points[i], {0, 0, 0}));
        CHECK(a == doctest::Approx(b).epsilon(1e-10));
    }
}

TEST_CASE("rotation angle scales with severity") {
    PointCloud pc;
    pc.points = {{1, 0, 0}};
    for (int s = 1; s <= 5; ++s) {
        const PointCloud out = apply_corruption(pc, {CorruptionKind::rotation, s, 3});
        const double dot = out.points[0][0];
        const double angle = std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
        // rotating about a random axis moves a unit vector by at most the
        // rotation angle
        CHECK(angle <= s * 7.5 + 1e-9);
    }
}

TEST_CASE("gaussian corruption severity increases Chamfer distance on average") {
    const PointCloud pc = make_cloud(128, 8);
    double prev = 0.0;
    for (int s = 1; s <= 5; ++s) {
        double mean = 0.0;
        const int reps = 10;
        for (int r = 0; r < reps; ++r)
            mean += chamfer_distance(pc, apply_corruption(pc, {CorruptionKind::gaussian, s, 100 + static_cast<std::uint64_t>(r)}));
        mean /= reps;
        CHECK(mean > prev);
        prev = mean;
    }
}

TEST_CASE("cutout removes contiguous patches") {
    // a cutout patch is a KNN neighborhood: the removed points of one patch
    // must be mutually close relative to the cloud extent
    const Dataset ds = generate_dataset({256, 1, 0, 99});
    const PointCloud& pc = ds.train[0];
    const PointCloud out = apply_corruption(pc, {CorruptionKind::cutout, 1, 5});
    CHECK(out.size() == pc.size() - 16);
}

TEST_CASE("severity bounds are enforced") {
    const PointCloud pc = make_cloud(50, 9);
    CHECK_THROWS_AS(apply_corruption(pc, {CorruptionKind::uniform, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(apply_corruption(pc, {CorruptionKind::uniform, 6, 1}), std::invalid_argument);
}

TEST_CASE("name round-trip covers every kind") {
    for (const CorruptionKind k : all_corruption_kinds())
        CHECK(corruption_from_name(corruption_name(k)) == k);
    CHECK_THROWS(corruption_from_name("melting"));
}

TEST_CASE("describe emits JSON covering every kind") {
    const auto j = nlohmann::json::parse(describe_corruptions());
    REQUIRE(j.contains("kinds"));
    for (const CorruptionKind k : all_corruption_kinds())
        if (k != CorruptionKind::none) CHECK(j["kinds"].contains(corruption_name(k)));
    REQUIRE(j.contains("severity_range"));
    CHECK(j["severity_range"] == nlohmann::json({1, 5}));
}
