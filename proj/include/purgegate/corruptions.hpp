#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "purgegate/point_cloud.hpp"

namespace pg {

enum class CorruptionKind {
    none,
    uniform,
    gaussian,
    background,
    impulse,
    upsampling,
    density_dec,
    density_inc,
    cutout,
    rotation,
    shear,
    distortion,
};

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::none;
    int severity = 1; // 1..5
    std::uint64_t rng_seed = 0;
};

const std::vector<CorruptionKind>& all_corruption_kinds();
std::string corruption_name(CorruptionKind kind);
CorruptionKind corruption_from_name(const std::string& name);

// Deterministic given (cloud, spec); preserves the label. kind=none is the
// identity. The per-kind transforms are desk-scale analogues of the usual
// benchmark families, documented by describe_corruptions().
PointCloud apply_corruption(const PointCloud& cloud, const CorruptionSpec& spec);

// JSON description of every kind's transform and severity scaling, used by
// `purge-gate corruptions --describe` and by documentation tests.
std::string describe_corruptions();

} // namespace pg
