#include "purgegate/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pg {

std::vector<std::size_t> farthest_point_centers(const PointCloud& cloud, std::size_t count,
                                                std::size_t seed_index) {
    const std::size_t n = cloud.points.size();
    if (count == 0 || count > n)
        throw std::invalid_argument("farthest_point_centers: count must be in [1, point count]");
    if (seed_index >= n) throw std::invalid_argument("farthest_point_centers: seed_index out of range");

    std::vector<std::size_t> centers;
    centers.reserve(count);
    centers.push_back(seed_index);

    // min squared distance from each point to the chosen center set
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    taken[seed_index] = 1;

    for (std::size_t step = 1; step < count; ++step) {
        const Vec3& last = cloud.points[centers.back()];
        for (std::size_t i = 0; i < n; ++i)
            min_d2[i] = std::min(min_d2[i], squared_dist(cloud.points[i], last));

        std::size_t best = n;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (min_d2[i] > best_d2) { // strict: ties keep the lowest index
                best_d2 = min_d2[i];
                best = i;
            }
        }
        centers.push_back(best);
        taken[best] = 1;
    }
    return centers;
}

Token knn_group(const PointCloud& cloud, std::size_t center_index, std::size_t k) {
    const std::size_t n = cloud.points.size();
    if (k == 0 || k > n) throw std::invalid_argument("knn_group: k must be in [1, point count]");
    if (center_index >= n) throw std::invalid_argument("knn_group: center_index out of range");

    const Vec3& center = cloud.points[center_index];
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double da = squared_dist(cloud.points[a], center);
                          const double db = squared_dist(cloud.points[b], center);
                          return da != db ? da < db : a < b;
                      });

    Token token;
    token.center = center;
    token.neighborhood.reserve(k);
    for (std::size_t i = 0; i < k; ++i) token.neighborhood.push_back(cloud.points[order[i]] - center);
    return token;
}

TokenizedSample tokenize(const PointCloud& cloud, std::size_t token_count, std::size_t k,
                         std::size_t seed_index) {
    TokenizedSample sample;
    sample.source_indices = farthest_point_centers(cloud, token_count, seed_index);
    sample.tokens.reserve(token_count);
    for (const std::size_t ci : sample.source_indices) sample.tokens.push_back(knn_group(cloud, ci, k));
    return sample;
}

} // namespace pg
