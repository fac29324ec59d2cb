#pragma once

#include <cstdint>
#include <vector>

#include "crowdflow/density.hpp"
#include "crowdflow/flow.hpp"
#include "crowdflow/grid.hpp"
#include "crowdflow/learn.hpp"

namespace crowdflow {

// A person proxy is a Gaussian confidence bump; high-confidence peaks occur
// only on isolated persons, so the clamp bounds of the quantizer are actually
// exercised.
struct PersonProxy {
    double x = 0.0;
    double y = 0.0;
    double peak = -0.3; // confidence at the bump center
};

struct TextureComponent {
    double amp = 0.0;
    double fx = 0.0; // cycles per pixel
    double fy = 0.0;
    double phase = 0.0;
};

// A fully deterministic synthetic scene: band-limited analytic texture plus
// person proxies. Frame 0 is pre-rendered; sequences re-render the same model
// at advected positions with no resampling error.
struct Scene {
    int width = 0;
    int height = 0;
    std::uint64_t seed = 0;
    double bump_sigma = 6.0;
    std::vector<PersonProxy> persons;
    std::vector<TextureComponent> texture_a;
    std::vector<TextureComponent> texture_b; // second stream for opposing motion

    Grid2D confidence; // frame 0
    Grid2D image;      // frame 0, intensities in [0, 1]
    AnnotationSet annotations;
};

struct VelocitySpec {
    enum class Kind { Uniform, OpposingStreams, Rotation };
    Kind kind = Kind::Uniform;
    double vx = 0.0;    // px/frame (uniform); stream speed for opposing (+vx / -vx)
    double vy = 0.0;    // px/frame (uniform only)
    double omega = 0.0; // rad/frame (rotation about the frame center)
};

struct Sequence {
    VelocitySpec spec;
    int width = 0;
    int height = 0;
    std::vector<Grid2D> frames; // images in [0, 1]
    std::vector<Grid2D> confidences;
    std::vector<AnnotationSet> annotations;

    // Exact per-pixel displacement from frame t to frame t+gap.
    FlowField gt_displacement(int t, int gap) const;
};

Scene generate_scene(int n_persons, int width, int height, std::uint64_t seed);

// Advect the scene for n_frames under the velocity spec. `noise_amp` adds a
// per-frame deterministic texture perturbation (violating brightness
// constancy slightly), which is what the flow-averaging tests need.
Sequence generate_sequence(const Scene& scene, const VelocitySpec& spec, int n_frames,
                           std::uint64_t seed, double noise_amp = 0.0);

// Random feature maps with ground truth generated from the planted weights
// exactly, so the fit term's global optimum is zero at w = w_star. Every
// index in [0, K) must appear in at least one frame.
std::vector<TrainingInstance> generate_planted_training(int n_frames, int vocab_k,
                                                        const std::vector<double>& w_star,
                                                        int width, int height,
                                                        std::uint64_t seed);

} // namespace crowdflow
