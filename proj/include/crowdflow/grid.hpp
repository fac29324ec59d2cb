#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crowdflow {

// Inclusive axis-aligned pixel rectangle. Empty boxes are unrepresentable:
// construction requires x0 <= x1 and y0 <= y1.
struct BoxRegion {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    BoxRegion() = default;
    BoxRegion(int x0_, int y0_, int x1_, int y1_);

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    long long area() const { return static_cast<long long>(width()) * height(); }

    bool operator==(const BoxRegion& o) const {
        return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
    }

    // Lexicographic order on (y0, x0, y1, x1); the repo-wide tie-break rule.
    bool lex_less(const BoxRegion& o) const;
};

// Dense row-major channel-interleaved raster of 32-bit floats.
// Pixel (x, y) has its center at continuous coordinate (x + 0.5, y + 0.5).
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(int width, int height, int channels = 1, float fill = 0.0f);
    Grid2D(int width, int height, int channels, std::vector<float> data);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    float& at(int x, int y, int c = 0) {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    float at(int x, int y, int c = 0) const {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    bool same_shape(const Grid2D& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }
    bool contains(const BoxRegion& box) const {
        return box.x0 >= 0 && box.y0 >= 0 && box.x1 < width_ && box.y1 < height_;
    }
    BoxRegion full_box() const { return BoxRegion(0, 0, width_ - 1, height_ - 1); }

    // Throws validation_error if any value is NaN or infinite.
    void require_finite(const char* what = "grid") const;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

// (width+1) x (height+1) prefix-sum table in 64-bit floats.
// entry(i, j) = sum of source values in rows < j, cols < i.
class IntegralImage {
public:
    IntegralImage() = default;
    explicit IntegralImage(const Grid2D& grid); // single-channel only

    int source_width() const { return width_; }
    int source_height() const { return height_; }

    double entry(int i, int j) const {
        return table_[static_cast<std::size_t>(j) * (width_ + 1) + i];
    }

    // Sum of source values inside the (inclusive) box. Throws on out-of-bounds.
    double box_sum(const BoxRegion& box) const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> table_;
};

IntegralImage integral_image(const Grid2D& grid);
double box_sum(const IntegralImage& sat, const BoxRegion& box);

// Deterministic grid sum: per-row partials accumulated in a fixed order, so
// the result does not depend on the number of threads.
double grid_sum(const Grid2D& grid, int channel = 0);

// Elementwise a - b (same shape, channel 0 of both), result single-channel.
Grid2D grid_difference(const Grid2D& a, const Grid2D& b);

// --- CGRID v1 file format -------------------------------------------------
// ASCII header `CGRID 1 <width> <height> <channels>\n` followed by
// width*height*channels little-endian IEEE-754 float32, row-major,
// channel-interleaved. Round trips are bit-exact.
void save_cgrid(const Grid2D& grid, const std::string& path);
Grid2D load_cgrid(const std::string& path);

// 8-bit PGM visualization export (P5 binary or P2 ascii), single channel.
// Values are mapped to [0,255] by min-max of the finite values; the value
// `nodata` (if finite values match it exactly) renders as 0.
void save_pgm(const Grid2D& grid, const std::string& path, bool binary = true,
              int channel = 0, float nodata = -9999.0f);

} // namespace crowdflow
