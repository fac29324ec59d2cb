#pragma once

#include <vector>

#include "crowdflow/georef.hpp"

namespace crowdflow {

// Per cell: population variance of the velocity samples within `radius_m`
// (disk by cell-center distance) across all fields of the time window,
// summed over the east and north components. Cells with fewer than two
// samples get 0; nodata samples are excluded.
WorldGrid velocity_variance(const std::vector<VelocityField>& fields, double radius_m);

// Human pressure P = density * Var(V). Density must be in persons per square
// meter (see density_to_per_m2). Nodata in either input propagates.
WorldGrid pressure_map(const WorldGrid& density_per_m2, const WorldGrid& variance);

} // namespace crowdflow
