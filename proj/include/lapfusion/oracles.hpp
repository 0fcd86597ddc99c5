#pragma once

#include "lapfusion/parallel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lapfusion {

/// One row of the operator self-check table.
struct OracleResult {
    std::string name;
    double value = 0.0;     ///< measured quantity
    double threshold = 0.0; ///< pass bound for `value`
    bool at_least = false;  ///< value must exceed the threshold instead of stay below it
    bool passed = false;
    std::string detail;
};

/// Checks the Laplacian operators and the point-cloud estimator against closed-form
/// answers: constant null space on random meshes, mean-curvature normals of
/// spheres, Voronoi area of a sphere, cross-operator agreement and exact
/// reconstruction from a single anchor.
std::vector<OracleResult> run_operator_oracles(std::uint64_t seed = 1, Exec exec = default_exec());

} // namespace lapfusion
