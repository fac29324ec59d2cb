#pragma once

// Plain serial counterparts of the OpenMP kernels. They are compiled into a
// separate library linked only by the tests and the benchmark: the tests
// compare them against the parallel kernels, the benchmark times both.
// max_subarray_bruteforce additionally enumerates every box directly, which
// makes it an oracle independent of the Kadane reduction it checks.

#include <vector>

#include "crowdflow/density.hpp"
#include "crowdflow/features.hpp"
#include "crowdflow/georef.hpp"
#include "crowdflow/grid.hpp"
#include "crowdflow/mesa.hpp"

namespace crowdflow::ref {

// Direct per-pixel summation inside the box (no prefix table).
double box_sum_direct(const Grid2D& grid, const BoxRegion& box);

// Naive single-pass recurrence S(i,j) = v + S(i-1,j) + S(i,j-1) - S(i-1,j-1);
// returns the (w+1) x (h+1) table with row stride w+1.
std::vector<double> integral_table_serial(const Grid2D& grid);

// O(W^2 H^2) enumeration of every box with incremental interval sums; same
// value and tie semantics as max_subarray by explicit tuple comparison.
MaxSubarrayResult max_subarray_bruteforce(const Grid2D& grid);

// Serial twin of dense_descriptors.
DescriptorMap dense_descriptors_serial(const Grid2D& image, int patch);

// Per-annotation splat loop (different loop nesting than the parallel
// row-owned version).
Grid2D rasterize_ground_truth_serial(const AnnotationSet& ann, double sigma, int width,
                                     int height);

// Plain left-to-right sum.
double grid_sum_serial(const Grid2D& grid, int channel = 0);

// Serial twin of velocity_variance.
WorldGrid velocity_variance_serial(const std::vector<VelocityField>& fields, double radius_m);

} // namespace crowdflow::ref
