#include "crowdflow/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "crowdflow/error.hpp"

namespace crowdflow {

void WeightVector::validate() const {
    if (static_cast<int>(weights.size()) != total_vocab()) {
        throw validation_error("WeightVector: length does not match vocabulary layout");
    }
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw validation_error("WeightVector: weights must be finite and nonnegative");
        }
    }
}

Grid2D rasterize_ground_truth(const AnnotationSet& ann, double sigma, int width, int height) {
    if (!(sigma > 0.0)) throw validation_error("rasterize_ground_truth: sigma must be positive");
    for (const auto& [ax, ay] : ann.points) {
        if (ax < 0.0 || ay < 0.0 || ax > width || ay > height) {
            throw validation_error("rasterize_ground_truth: annotation outside image bounds");
        }
    }
    const double radius = 3.0 * sigma;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const int n = static_cast<int>(ann.points.size());

    // Per-annotation kernel mass over the clipped window, so each person
    // contributes exactly 1 after division.
    struct Window {
        int x0, x1, y0, y1;
        double mass;
    };
    std::vector<Window> wins(n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const auto [ax, ay] = ann.points[i];
        Window win;
        win.x0 = std::max(0, static_cast<int>(std::ceil(ax - 0.5 - radius)));
        win.x1 = std::min(width - 1, static_cast<int>(std::floor(ax - 0.5 + radius)));
        win.y0 = std::max(0, static_cast<int>(std::ceil(ay - 0.5 - radius)));
        win.y1 = std::min(height - 1, static_cast<int>(std::floor(ay - 0.5 + radius)));
        double mass = 0.0;
        for (int y = win.y0; y <= win.y1; ++y) {
            const double dy = (y + 0.5) - ay;
            for (int x = win.x0; x <= win.x1; ++x) {
                const double dx = (x + 0.5) - ax;
                mass += std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
        win.mass = mass;
        wins[i] = win;
    }

    // Accumulate in double; each output row is owned by one thread and
    // annotations are visited in fixed order, so the result is thread-count
    // independent.
    std::vector<double> acc(static_cast<std::size_t>(width) * height, 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        for (int i = 0; i < n; ++i) {
            const Window& win = wins[i];
            if (y < win.y0 || y > win.y1 || win.mass <= 0.0) continue;
            const auto [ax, ay] = ann.points[i];
            const double dy = (y + 0.5) - ay;
            const double scale = 1.0 / win.mass;
            for (int x = win.x0; x <= win.x1; ++x) {
                const double dx = (x + 0.5) - ax;
                acc[static_cast<std::size_t>(y) * width + x] +=
                    std::exp(-(dx * dx + dy * dy) * inv2s2) * scale;
            }
        }
    }

    // Quantize to f32 with error feedback so the stored map keeps the exact
    // total. The carry only flows through support pixels: zeros stay zero,
    // preserving the truncated kernel support, and the final remainder lands
    // on the smallest support pixel, where a float ulp is far below 1e-9.
    Grid2D density(width, height, 1, 0.0f);
    double carry = 0.0;
    std::size_t smallest = acc.size();
    double smallest_val = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i] <= 0.0) continue;
        const double ideal = acc[i] + carry;
        const float stored = ideal > 0.0 ? static_cast<float>(ideal) : 0.0f;
        density.data()[i] = stored;
        carry = ideal - static_cast<double>(stored);
        if (acc[i] < smallest_val) {
            smallest_val = acc[i];
            smallest = i;
        }
    }
    if (smallest < acc.size() && carry != 0.0) {
        const double fixed = static_cast<double>(density.data()[smallest]) + carry;
        if (fixed > 0.0) density.data()[smallest] = static_cast<float>(fixed);
    }
    return density;
}

Grid2D estimate_density(const FeatureIndexMap& feat, const WeightVector& w) {
    if (static_cast<int>(w.weights.size()) != feat.total_vocab()) {
        throw validation_error("estimate_density: weight length does not match feature vocabulary");
    }
    const int width = feat.width(), height = feat.height(), channels = feat.channels();
    Grid2D density(width, height, 1);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double v = 0.0;
            for (int c = 0; c < channels; ++c) v += w.weights[feat.global_at(x, y, c)];
            density.at(x, y) = static_cast<float>(v);
        }
    }
    return density;
}

double count_total(const Grid2D& density) { return grid_sum(density, 0); }

double count_region(const Grid2D& density, const BoxRegion& box) {
    if (density.channels() != 1) throw validation_error("count_region: density must be single-channel");
    if (!density.contains(box)) throw validation_error("count_region: box out of bounds");
    return integral_image(density).box_sum(box);
}

void save_annotations(const std::vector<AnnotationSet>& sets, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_annotations: cannot open '" + path + "'");
    out << "frame,x,y\n";
    char line[96];
    for (const auto& set : sets) {
        for (const auto& [x, y] : set.points) {
            std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g\n",
                          static_cast<long long>(set.frame), x, y);
            out << line;
        }
    }
    if (!out) throw io_error("save_annotations: write failed for '" + path + "'");
}

std::vector<AnnotationSet> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_annotations: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw io_error("load_annotations: empty file '" + path + "'");
    if (line.rfind("frame,x,y", 0) != 0) {
        throw io_error("load_annotations: expected 'frame,x,y' header in '" + path + "'");
    }
    std::vector<AnnotationSet> sets;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        long long frame;
        double x, y;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lf", &frame, &x, &y) != 3) {
            throw io_error("load_annotations: malformed row at line " + std::to_string(lineno) +
                           " of '" + path + "'");
        }
        auto it = std::find_if(sets.begin(), sets.end(),
                               [&](const AnnotationSet& s) { return s.frame == frame; });
        if (it == sets.end()) {
            sets.push_back(AnnotationSet{frame, {}});
            it = sets.end() - 1;
        }
        it->points.emplace_back(x, y);
    }
    return sets;
}

} // namespace crowdflow
