#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/density.hpp"
#include "crowdflow/features.hpp"
#include "crowdflow/grid.hpp"

namespace crowdflow {

enum class Regularizer { L1, Tikhonov };

// One labeled frame: discretized features plus the ground-truth density map.
struct TrainingInstance {
    FeatureIndexMap features;
    Grid2D gt_density;
    std::int64_t frame = 0;
};

// A box cut: estimated count in the box is w . counts, the target is the
// ground-truth mass inside it.
struct BoxConstraint {
    int instance = 0;
    std::int64_t frame = 0;
    BoxRegion box;
    std::vector<std::pair<std::int32_t, float>> counts; // (global feature index, count)
    double target = 0.0;
};

struct LearnParams {
    Regularizer reg = Regularizer::L1;
    double lambda_fit = 100.0; // weight of the MESA fit term
    double lambda1 = 0.1;      // L1 strength (ignored under Tikhonov)
    double eps_cut = 0.1;      // persons; cut acceptance / termination margin
    int max_outer = 100;
    // Inner projected-subgradient solver.
    int inner_max_iters = 12000;
    double inner_rel_tol = 1e-7;
    int inner_patience = 50;
    double step_decay = 0.0; // b in the a/(1 + k*b) schedule; 0 picks it from the budget
};

struct LearnDiagnostics {
    std::vector<double> outer_objective; // true regularized MESA risk, best-so-far
    std::vector<double> raw_objective;   // risk of each candidate iterate
    std::vector<double> inner_objective; // optimum of the relaxed problem per iteration
    std::vector<int> constraint_count;
    std::vector<double> max_violation; // max_i (true MESA_i - slack_i)
    int outer_iterations = 0;
    bool converged = false;
    double final_max_violation = 0.0;
};

struct Model {
    WeightVector w;
    Regularizer reg = Regularizer::L1;
    double lambda_fit = 100.0;
    double lambda1 = 0.1;
};

// Histogram of global feature indices over the pixels of `box`; satisfies
// w . counts == count_region(estimate_density(feat, w), box) for any w.
std::vector<double> box_feature_counts(const FeatureIndexMap& feat, const BoxRegion& box);

// Cutting-plane minimization of R(w) + lambda_fit * sum_i MESA(GT_i, est_i(w))
// over w >= 0. Each outer iteration finds the most-violated boxes per instance
// with max_subarray on the signed residual, adds them as constraints, and
// re-solves the relaxed problem with a deterministic projected subgradient.
std::pair<Model, LearnDiagnostics> learn_weights(const std::vector<TrainingInstance>& train,
                                                 const LearnParams& params = {});

// Throws unless the model's vocabulary layout matches the map's exactly.
void require_layout_match(const Model& model, const FeatureIndexMap& feat);

// Model file: `CMODEL 1 <nfeatures> <L1|TIK> <lambda_fit> <lambda1>\n` +
// `<channels> <K_0> <K_1> ...\n` + nfeatures little-endian f64. Round trips
// are bit-exact.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

} // namespace crowdflow
