#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "purgegate/dataset.hpp"
#include "purgegate/errors.hpp"
#include "purgegate/point_cloud.hpp"
#include "purgegate/rng.hpp"

using namespace pg;

TEST_CASE("dataset is balanced, labeled, and deterministic") {
    const DatasetSpec spec{128, 10, 4, 77};
    const Dataset a = generate_dataset(spec);
    REQUIRE(a.train.size() == 40);
    REQUIRE(a.test.size() == 16);
    std::vector<int> train_counts(4, 0), test_counts(4, 0);
    for (const auto& c : a.train) {
        REQUIRE(c.label.has_value());
        REQUIRE(c.size() == 128);
        ++train_counts[*c.label];
    }
    for (const auto& c : a.test) ++test_counts[*c.label];
    for (int i = 0; i < 4; ++i) {
        CHECK(train_counts[i] == 10);
        CHECK(test_counts[i] == 4);
    }

    const Dataset b = generate_dataset(spec);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].points == b.train[i].points);
    const Dataset c = generate_dataset({128, 10, 4, 78});
    CHECK(c.train[0].points != a.train[0].points);
}

TEST_CASE("shape samplers stay near their ideal surfaces") {
    // sphere: radius 1; jitter sigma 0.005 -> all radii in [0.95, 1.05]
    const PointCloud sphere = sample_shape(0, 400, 5);
    for (const Vec3& p : sphere.points) {
        const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        CHECK(r > 0.95);
        CHECK(r < 1.05);
    }
    // cube: max |coordinate| close to 1
    const PointCloud cube = sample_shape(1, 400, 5);
    for (const Vec3& p : cube.points) {
        const double m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
        CHECK(m > 0.9);
        CHECK(m < 1.1);
    }
    CHECK_THROWS_AS(sample_shape(4, 10, 1), std::invalid_argument);
}

TEST_CASE("classes are separable by nearest-centroid Chamfer distance") {
    // an oracle classifier with no learned parameters must already beat 70%:
    // one reference cloud per class, assign by smallest Chamfer distance
    const Dataset ds = generate_dataset({256, 1, 10, 123});
    std::size_t hits = 0;
    for (const auto& probe : ds.test) {
        int best = -1;
        double best_d = 1e300;
        for (const auto& ref : ds.train) {
            const double d = chamfer_distance(probe, ref);
            if (d < best_d) {
                best_d = d;
                best = *ref.label;
            }
        }
        hits += best == *probe.label;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(ds.test.size()) >= 0.7);
}

TEST_CASE("dataset save/load round-trips through PGPC files") {
    const Dataset ds = generate_dataset({64, 3, 2, 9});
    const std::string dir = (std::filesystem::temp_directory_path() / "pg_test_ds").string();
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        REQUIRE(back.train[i].size() == ds.train[i].size());
        // payload is f32 on disk
        for (std::size_t p = 0; p < ds.train[i].size(); ++p)
            for (int c = 0; c < 3; ++c)
                CHECK(back.train[i].points[p][c] ==
                      doctest::Approx(ds.train[i].points[p][c]).epsilon(1e-6));
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), IoError);
}

TEST_CASE("cloud binary io round-trips and rejects bad magic") {
    PointCloud pc;
    pc.points = {{0.25, -1.5, 3.0}, {0.0009765625, 0.0, -0.125}};
    const std::string path = (std::filesystem::temp_directory_path() / "pg_test_cloud.pgpc").string();
    save_cloud_binary(pc, path);
    const PointCloud back = load_cloud_binary(path);
    CHECK(back.points == pc.points); // these values are exact in f32

    // corrupt the magic
    {
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_cloud_binary(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_cloud_binary(path), IoError);
}

TEST_CASE("bounding box and chamfer basics") {
    PointCloud a;
    a.points = {{0, 0, 0}, {1, 2, -1}};
    const Bounds b = bounding_box(a);
    CHECK(b.lo == Vec3{0, 0, -1});
    CHECK(b.hi == Vec3{1, 2, 0});

    CHECK(chamfer_distance(a, a) == 0.0);
    PointCloud c = a;
    for (auto& p : c.points) p[0] += 0.1;
    CHECK(chamfer_distance(a, c) > 0.0);
    // symmetric
    CHECK(chamfer_distance(a, c) == doctest::Approx(chamfer_distance(c, a)));
}
