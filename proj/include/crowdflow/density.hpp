#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowdflow/features.hpp"
#include "crowdflow/grid.hpp"

namespace crowdflow {

// Point annotations for one frame; one continuous (x, y) per person.
struct AnnotationSet {
    std::int64_t frame = 0;
    std::vector<std::pair<double, double>> points;

    std::size_t count() const { return points.size(); }
};

// Nonnegative per-pixel weights, one per global feature index.
struct WeightVector {
    std::vector<double> weights;
    std::vector<int> vocab_sizes; // layout the weights were learned against

    int total_vocab() const {
        int t = 0;
        for (int k : vocab_sizes) t += k;
        return t;
    }
    // Throws if any weight is negative or the length disagrees with the layout.
    void validate() const;
};

// Ground-truth density: one truncated, unit-renormalized isotropic Gaussian
// per annotation, so the map sums to the annotation count exactly. Kernels
// are evaluated at pixel centers and truncated at 3*sigma; near borders the
// renormalization runs over the surviving in-image pixels.
Grid2D rasterize_ground_truth(const AnnotationSet& ann, double sigma, int width, int height);

// density(p) = sum over channels of w[offset_c + index_c(p)].
Grid2D estimate_density(const FeatureIndexMap& feat, const WeightVector& w);

// Sum over all pixels, accumulated in 64-bit.
double count_total(const Grid2D& density);

// Sum inside an inclusive box, via integral image.
double count_region(const Grid2D& density, const BoxRegion& box);

// --- annotation CSV ----------------------------------------------------------
// Header `frame,x,y`, one row per person, LF endings. A file may mix frames;
// loading returns the sets ordered by first appearance.
void save_annotations(const std::vector<AnnotationSet>& sets, const std::string& path);
std::vector<AnnotationSet> load_annotations(const std::string& path);

} // namespace crowdflow
