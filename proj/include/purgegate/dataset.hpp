#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "purgegate/point_cloud.hpp"

namespace pg {

// Four synthetic surface classes: sphere, cube, cylinder, two-plane cross.
// Uniform surface sampling plus 0.5% Gaussian jitter.
inline constexpr std::size_t kNumShapeClasses = 4;
const std::vector<std::string>& shape_class_names();

PointCloud sample_shape(int class_index, std::size_t n_points, std::uint64_t seed);

struct DatasetSpec {
    std::size_t points_per_cloud = 512;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 50;
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<PointCloud> train; // labels set
    std::vector<PointCloud> test;
};

Dataset generate_dataset(const DatasetSpec& spec);

// On-disk layout: <dir>/index.json listing {file, label, split} plus one
// PGPC file per cloud.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

} // namespace pg
