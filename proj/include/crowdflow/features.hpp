#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowdflow/grid.hpp"

namespace crowdflow {

// Per-pixel discretized feature indices, one integer per channel, plus the
// per-channel vocabulary sizes. The global feature index of (pixel, channel c)
// is offset(c) + index, where offset(c) is the prefix sum of vocabulary sizes.
class FeatureIndexMap {
public:
    FeatureIndexMap() = default;
    FeatureIndexMap(int width, int height, std::vector<int> vocab_sizes);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return static_cast<int>(vocab_sizes_.size()); }
    const std::vector<int>& vocab_sizes() const { return vocab_sizes_; }

    int offset(int channel) const { return offsets_[channel]; }
    int total_vocab() const { return offsets_.back(); }

    std::int32_t& at(int x, int y, int c = 0) {
        return indices_[(static_cast<std::size_t>(y) * width_ + x) * channels() + c];
    }
    std::int32_t at(int x, int y, int c = 0) const {
        return indices_[(static_cast<std::size_t>(y) * width_ + x) * channels() + c];
    }

    std::int32_t global_at(int x, int y, int c = 0) const { return offset(c) + at(x, y, c); }

    // Throws if any index is outside [0, K_c - 1].
    void validate() const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<int> vocab_sizes_;
    std::vector<int> offsets_; // size channels+1, offsets_[channels] = total vocab
    std::vector<std::int32_t> indices_;
};

// K prototype vectors of dimension D plus construction metadata.
struct Codebook {
    int k = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    int iterations = 0;
    double distortion = 0.0;       // mean squared distance at convergence
    std::vector<float> prototypes; // k * dim, row-major

    const float* prototype(int i) const { return &prototypes[static_cast<std::size_t>(i) * dim]; }
};

// Dense per-pixel descriptors, dim floats per pixel.
struct DescriptorMap {
    int width = 0;
    int height = 0;
    int dim = 0;
    std::vector<float> data; // width * height * dim

    const float* at(int x, int y) const {
        return &data[(static_cast<std::size_t>(y) * width + x) * dim];
    }
    float* at(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * dim]; }
};

// Discretize detector confidences into `bins` levels. Values are clamped to
// [min_conf, max_conf], scaled to [0, bins-1] and rounded half-away-from-zero.
FeatureIndexMap quantize_confidences(const Grid2D& conf, double min_conf = -4.0,
                                     double max_conf = -0.6, int bins = 256);

// 128-dim gradient-orientation descriptor per pixel: 4x4 spatial cells times
// 8 orientation bins over a centered patch, L2-normalized, clipped at 0.2 and
// renormalized. Zero-gradient patches yield the zero descriptor.
DescriptorMap dense_descriptors(const Grid2D& image, int patch = 16);

// k-means with k-means++ seeding; deterministic for a fixed seed. Samples are
// n rows of dimension dim, row-major.
Codebook build_codebook(const std::vector<float>& samples, int n, int dim, int k,
                        std::uint64_t seed);

// Nearest prototype per pixel (Euclidean); ties go to the lowest index.
FeatureIndexMap quantize_descriptors(const DescriptorMap& desc, const Codebook& book);

// Concatenate the channels of several equally-sized maps; vocabulary offsets
// are recomputed so global indices of later maps shift by the earlier totals.
FeatureIndexMap stack_feature_maps(const std::vector<FeatureIndexMap>& maps);

// Split a stacked map back into its single-channel constituents.
std::vector<FeatureIndexMap> unstack_feature_maps(const FeatureIndexMap& map);

// --- file formats ----------------------------------------------------------
// Codebook: ASCII header `CBOOK 1 <K> <D> <seed>\n` + K*D little-endian f32.
void save_codebook(const Codebook& book, const std::string& path);
Codebook load_codebook(const std::string& path);

// Index maps travel as CGRID (indices stored as exact small floats) plus a
// JSON sidecar `<path>.vocab.json` carrying the per-channel vocabulary sizes.
void save_feature_map(const FeatureIndexMap& map, const std::string& path);
FeatureIndexMap load_feature_map(const std::string& path);

// Descriptor maps as dim-channel CGRID.
void save_descriptor_map(const DescriptorMap& desc, const std::string& path);
DescriptorMap load_descriptor_map(const std::string& path);

} // namespace crowdflow
