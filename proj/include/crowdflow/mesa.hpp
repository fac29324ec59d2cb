#pragma once

#include "crowdflow/grid.hpp"

namespace crowdflow {

struct MaxSubarrayResult {
    BoxRegion box;
    double value = 0.0;
};

// Best (maximum-sum) nonempty box of a single-channel grid, found by row-pair
// reduction to 1D Kadane scans, O(min(W,H)^2 * max(W,H)). Ties are broken by
// the lexicographically smallest (y0, x0, y1, x1).
MaxSubarrayResult max_subarray(const Grid2D& grid);

// MESA distance between two equally-sized density maps:
// max over all boxes of |integral(f1, box) - integral(f2, box)|, floored at 0.
double mesa_distance(const Grid2D& f1, const Grid2D& f2);

} // namespace crowdflow
