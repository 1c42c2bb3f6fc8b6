#pragma once

#include <cstddef>
#include <vector>

#include "purgegate/point_cloud.hpp"

namespace pg {

// One local patch: a center point and its k nearest neighbors stored as
// offsets relative to the center.
struct Token {
    Vec3 center;
    std::vector<Vec3> neighborhood; // size k, point - center
};

struct TokenizedSample {
    std::vector<Token> tokens;
    std::vector<std::size_t> source_indices; // per-token center index in the cloud
};

// Greedy farthest-point selection. The first center is seed_index; each
// subsequent center maximizes the minimum distance to the centers chosen so
// far. Ties break toward the lowest point index.
std::vector<std::size_t> farthest_point_centers(const PointCloud& cloud, std::size_t count,
                                                std::size_t seed_index = 0);

// The k points nearest to cloud.points[center_index] (the center itself is
// eligible), re-centered as offsets. Ties break toward the lowest index.
Token knn_group(const PointCloud& cloud, std::size_t center_index, std::size_t k);

TokenizedSample tokenize(const PointCloud& cloud, std::size_t token_count, std::size_t k,
                         std::size_t seed_index = 0);

} // namespace pg
