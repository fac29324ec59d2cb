#include "crowdflow/grid.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "crowdflow/error.hpp"

namespace crowdflow {

BoxRegion::BoxRegion(int x0_, int y0_, int x1_, int y1_) : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {
    if (x0 > x1 || y0 > y1 || x0 < 0 || y0 < 0) {
        throw validation_error("BoxRegion: corners must satisfy 0 <= x0 <= x1, 0 <= y0 <= y1");
    }
}

bool BoxRegion::lex_less(const BoxRegion& o) const {
    if (y0 != o.y0) return y0 < o.y0;
    if (x0 != o.x0) return x0 < o.x0;
    if (y1 != o.y1) return y1 < o.y1;
    return x1 < o.x1;
}

Grid2D::Grid2D(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || channels < 1) {
        throw validation_error("Grid2D: width/height must be positive and channels >= 1");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Grid2D::Grid2D(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (width <= 0 || height <= 0 || channels < 1) {
        throw validation_error("Grid2D: width/height must be positive and channels >= 1");
    }
    if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
        throw validation_error("Grid2D: data length must equal width*height*channels");
    }
}

void Grid2D::require_finite(const char* what) const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw validation_error(std::string(what) + ": contains non-finite values");
        }
    }
}

IntegralImage::IntegralImage(const Grid2D& grid) : width_(grid.width()), height_(grid.height()) {
    if (grid.channels() != 1) {
        throw validation_error("integral_image: input must have exactly 1 channel");
    }
    const int w = width_, h = height_;
    table_.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);

    // Two separable prefix passes; each row/column is owned by one thread,
    // so the result is identical for any thread count.
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double rowsum = 0.0;
        double* out = &table_[static_cast<std::size_t>(y + 1) * (w + 1)];
        for (int x = 0; x < w; ++x) {
            rowsum += static_cast<double>(grid.at(x, y));
            out[x + 1] = rowsum;
        }
    }
#pragma omp parallel for schedule(static)
    for (int x = 1; x <= w; ++x) {
        double colsum = 0.0;
        for (int y = 1; y <= h; ++y) {
            colsum += table_[static_cast<std::size_t>(y) * (w + 1) + x];
            table_[static_cast<std::size_t>(y) * (w + 1) + x] = colsum;
        }
    }
}

double IntegralImage::box_sum(const BoxRegion& box) const {
    if (box.x1 >= width_ || box.y1 >= height_) {
        throw validation_error("box_sum: box exceeds table bounds");
    }
    const double a = entry(box.x0, box.y0);
    const double b = entry(box.x1 + 1, box.y0);
    const double c = entry(box.x0, box.y1 + 1);
    const double d = entry(box.x1 + 1, box.y1 + 1);
    return d - b - c + a;
}

IntegralImage integral_image(const Grid2D& grid) { return IntegralImage(grid); }

double box_sum(const IntegralImage& sat, const BoxRegion& box) { return sat.box_sum(box); }

double grid_sum(const Grid2D& grid, int channel) {
    const int w = grid.width(), h = grid.height();
    std::vector<double> row_partials(h, 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double s = 0.0;
        for (int x = 0; x < w; ++x) s += static_cast<double>(grid.at(x, y, channel));
        row_partials[y] = s;
    }
    double total = 0.0;
    for (int y = 0; y < h; ++y) total += row_partials[y];
    return total;
}

Grid2D grid_difference(const Grid2D& a, const Grid2D& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw validation_error("grid_difference: dimension mismatch");
    }
    Grid2D out(a.width(), a.height(), 1);
    const int w = a.width(), h = a.height();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.at(x, y) = a.at(x, y) - b.at(x, y);
    }
    return out;
}

// --- file I/O ---------------------------------------------------------------

namespace {

void put_f32le(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    buf.push_back(static_cast<char>(bits & 0xff));
    buf.push_back(static_cast<char>((bits >> 8) & 0xff));
    buf.push_back(static_cast<char>((bits >> 16) & 0xff));
    buf.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32le(const unsigned char* p) {
    std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                         (static_cast<std::uint32_t>(p[2]) << 16) |
                         (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

void save_cgrid(const Grid2D& grid, const std::string& path) {
    if (grid.width() <= 0) throw validation_error("save_cgrid: empty grid");
    grid.require_finite("save_cgrid");
    std::string buf;
    buf.reserve(64 + grid.size() * 4);
    char header[64];
    std::snprintf(header, sizeof(header), "CGRID 1 %d %d %d\n", grid.width(), grid.height(),
                  grid.channels());
    buf.append(header);
    for (float v : grid.data()) put_f32le(buf, v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_cgrid: cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("save_cgrid: write failed for '" + path + "'");
}

Grid2D load_cgrid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_cgrid: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw io_error("load_cgrid: missing header in '" + path + "'");
    int version = 0, w = 0, h = 0, c = 0;
    if (std::sscanf(header.c_str(), "CGRID %d %d %d %d", &version, &w, &h, &c) != 4) {
        throw io_error("load_cgrid: malformed CGRID header in '" + path + "'");
    }
    if (version != 1) throw io_error("load_cgrid: unsupported CGRID version in '" + path + "'");
    if (w <= 0 || h <= 0 || c < 1) throw io_error("load_cgrid: bad dimensions in '" + path + "'");
    const std::size_t n = static_cast<std::size_t>(w) * h * c;
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw io_error("load_cgrid: truncated payload in '" + path + "'");
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f32le(&raw[i * 4]);
    Grid2D grid(w, h, c, std::move(data));
    grid.require_finite("load_cgrid");
    return grid;
}

void save_pgm(const Grid2D& grid, const std::string& path, bool binary, int channel,
              float nodata) {
    if (channel < 0 || channel >= grid.channels()) {
        throw validation_error("save_pgm: channel out of range");
    }
    const int w = grid.width(), h = grid.height();
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = grid.at(x, y, channel);
            if (!std::isfinite(v) || v == nodata) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const float span = (hi > lo) ? (hi - lo) : 1.0f;
    std::vector<unsigned char> pix(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = grid.at(x, y, channel);
            if (!std::isfinite(v) || v == nodata || !(hi >= lo)) continue;
            const float t = (v - lo) / span;
            pix[static_cast<std::size_t>(y) * w + x] =
                static_cast<unsigned char>(std::lround(t * 255.0f));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_pgm: cannot open '" + path + "' for writing");
    if (binary) {
        out << "P5\n" << w << " " << h << "\n255\n";
        out.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    } else {
        out << "P2\n" << w << " " << h << "\n255\n";
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out << static_cast<int>(pix[static_cast<std::size_t>(y) * w + x])
                    << (x + 1 == w ? '\n' : ' ');
            }
        }
    }
    if (!out) throw io_error("save_pgm: write failed for '" + path + "'");
}

} // namespace crowdflow
