#include "purgegate/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "purgegate/errors.hpp"
#include "purgegate/rng.hpp"

namespace pg {

const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "cross"};
    return names;
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Vec3 sample_sphere(Rng& rng) { return rng.unit_vector3(); }

Vec3 sample_cube(Rng& rng) {
    // face chosen uniformly (all faces have equal area on [-1,1]^3)
    const int face = static_cast<int>(rng.index(6));
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? -1.0 : 1.0;
    Vec3 p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    p[axis] = sign;
    return p;
}

Vec3 sample_cylinder(Rng& rng) {
    // radius 0.7, z in [-1, 1]; lateral surface vs caps weighted by area
    constexpr double r = 0.7, h = 2.0;
    const double lateral_area = kTwoPi * r * h;
    const double cap_area = 2.0 * 3.14159265358979323846 * r * r;
    if (rng.uniform() < lateral_area / (lateral_area + cap_area)) {
        const double phi = rng.uniform(0.0, kTwoPi);
        return {r * std::cos(phi), r * std::sin(phi), rng.uniform(-1.0, 1.0)};
    }
    const double z = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double rr = r * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, kTwoPi);
    return {rr * std::cos(phi), rr * std::sin(phi), z};
}

Vec3 sample_cross(Rng& rng) {
    // two orthogonal unit squares intersecting along the z axis
    if (rng.uniform() < 0.5) return {rng.uniform(-1.0, 1.0), 0.0, rng.uniform(-1.0, 1.0)};
    return {0.0, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
}

} // namespace

PointCloud sample_shape(int class_index, std::size_t n_points, std::uint64_t seed) {
    if (class_index < 0 || class_index >= static_cast<int>(kNumShapeClasses))
        throw std::invalid_argument("sample_shape: class index out of range");
    if (n_points == 0) throw std::invalid_argument("sample_shape: need at least one point");
    Rng rng(seed);
    PointCloud cloud;
    cloud.label = class_index;
    cloud.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        Vec3 p;
        switch (class_index) {
        case 0: p = sample_sphere(rng); break;
        case 1: p = sample_cube(rng); break;
        case 2: p = sample_cylinder(rng); break;
        default: p = sample_cross(rng); break;
        }
        for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, 0.005); // 0.5% jitter
        cloud.points.push_back(p);
    }
    return cloud;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    Dataset ds;
    Rng seeder = Rng::derive(spec.seed, "dataset");
    for (std::size_t cls = 0; cls < kNumShapeClasses; ++cls) {
        for (std::size_t i = 0; i < spec.train_per_class; ++i)
            ds.train.push_back(sample_shape(static_cast<int>(cls), spec.points_per_cloud,
                                            seeder.next_u64()));
        for (std::size_t i = 0; i < spec.test_per_class; ++i)
            ds.test.push_back(sample_shape(static_cast<int>(cls), spec.points_per_cloud,
                                           seeder.next_u64()));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);

    nlohmann::json index;
    index["classes"] = shape_class_names();
    auto& entries = index["clouds"];
    entries = nlohmann::json::array();

    auto dump_split = [&](const std::vector<PointCloud>& clouds, const std::string& split) {
        for (std::size_t i = 0; i < clouds.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%05zu.pgpc", split.c_str(), i);
            save_cloud_binary(clouds[i], (fs::path(dir) / name).string());
            entries.push_back({{"file", name}, {"label", clouds[i].label.value_or(-1)},
                               {"split", split}});
        }
    };
    dump_split(ds.train, "train");
    dump_split(ds.test, "test");

    std::ofstream out(fs::path(dir) / "index.json");
    if (!out) throw IoError("cannot write dataset index in " + dir);
    out << index.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "index.json");
    if (!in) throw IoError("cannot open dataset index in " + dir);
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad dataset index in " + dir + ": " + e.what());
    }

    Dataset ds;
    for (const auto& entry : index.at("clouds")) {
        PointCloud cloud = load_cloud_binary((fs::path(dir) / entry.at("file").get<std::string>()).string());
        cloud.label = entry.at("label").get<int>();
        const std::string split = entry.at("split").get<std::string>();
        if (split == "train")
            ds.train.push_back(std::move(cloud));
        else if (split == "test")
            ds.test.push_back(std::move(cloud));
        else
            throw FormatError("unknown split '" + split + "' in dataset index");
    }
    return ds;
}

} // namespace pg
