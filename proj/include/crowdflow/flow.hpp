#pragma once

#include <vector>

#include "crowdflow/grid.hpp"

namespace crowdflow {

// 2-channel grid: channel 0 = dx, channel 1 = dy, in pixels per frame gap.
using FlowField = Grid2D;

struct FlowParams {
    double lambda = 0.15; // data term weight
    double theta = 0.3;   // coupling relaxation
    double tau = 0.25;    // dual ascent step, must stay <= 0.25 for stability
    int warps = 5;
    int inner_iters = 50;
    double pyramid_scale = 0.5; // in (0, 1)
    int min_level_size = 16;    // stop the pyramid before min(w,h) drops below
    int frame_gap = 10;         // frames between the pair fed to tvl1_flow
    int avg_window = 5;         // flows merged by temporal averaging

    void validate() const;
};

// Duality-based coarse-to-fine TV-L1 flow between two single-channel frames
// with intensities in [0, 1]. Per level: repeated warps of the second image,
// alternating a pointwise thresholding step on the data term with dual-ascent
// sweeps on the total-variation term. All sweeps are double-buffered, so the
// result does not depend on thread count.
FlowField tvl1_flow(const Grid2D& i1, const Grid2D& i2, const FlowParams& params = {});

// Per-pixel arithmetic mean of the given flow fields.
FlowField average_flows(const std::vector<FlowField>& fields);

// TV-L1 energy of a flow for a frame pair: sum of lambda * |i2(x+u) - i1(x)|
// plus the total variation of both flow components (forward differences).
double flow_energy(const Grid2D& i1, const Grid2D& i2, const FlowField& flow, double lambda);

// Channel mean, used to feed multi-channel imagery to the flow estimator.
Grid2D to_grayscale(const Grid2D& image);

} // namespace crowdflow
