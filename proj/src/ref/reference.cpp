#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"

namespace crowdflow::ref {

double box_sum_direct(const Grid2D& grid, const BoxRegion& box) {
    double s = 0.0;
    for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) s += static_cast<double>(grid.at(x, y));
    }
    return s;
}

std::vector<double> integral_table_serial(const Grid2D& grid) {
    const int w = grid.width(), h = grid.height();
    std::vector<double> table(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 1; y <= h; ++y) {
        for (int x = 1; x <= w; ++x) {
            table[static_cast<std::size_t>(y) * (w + 1) + x] =
                static_cast<double>(grid.at(x - 1, y - 1)) +
                table[static_cast<std::size_t>(y - 1) * (w + 1) + x] +
                table[static_cast<std::size_t>(y) * (w + 1) + x - 1] -
                table[static_cast<std::size_t>(y - 1) * (w + 1) + x - 1];
        }
    }
    return table;
}

MaxSubarrayResult max_subarray_bruteforce(const Grid2D& grid) {
    const int w = grid.width(), h = grid.height();
    double best = -std::numeric_limits<double>::infinity();
    BoxRegion best_box;
    bool have = false;
    std::vector<double> colsum(w);
    for (int y0 = 0; y0 < h; ++y0) {
        std::fill(colsum.begin(), colsum.end(), 0.0);
        for (int y1 = y0; y1 < h; ++y1) {
            for (int x = 0; x < w; ++x) colsum[x] += static_cast<double>(grid.at(x, y1));
            for (int x0 = 0; x0 < w; ++x0) {
                double s = 0.0;
                for (int x1 = x0; x1 < w; ++x1) {
                    s += colsum[x1];
                    const BoxRegion box(x0, y0, x1, y1);
                    if (!have || s > best || (s == best && box.lex_less(best_box))) {
                        best = s;
                        best_box = box;
                        have = true;
                    }
                }
            }
        }
    }
    return {best_box, best};
}

DescriptorMap dense_descriptors_serial(const Grid2D& image, int patch) {
    if (image.channels() != 1) throw validation_error("dense_descriptors_serial: single-channel only");
    const int w = image.width(), h = image.height();
    const int half = patch / 2;
    const int cell = patch / 4;
    constexpr int kBins = 8;
    constexpr int kDim = 128;

    std::vector<float> gx(static_cast<std::size_t>(w) * h), gy(gx.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            gx[static_cast<std::size_t>(y) * w + x] = 0.5f * (image.at(xp, y) - image.at(xm, y));
            gy[static_cast<std::size_t>(y) * w + x] = 0.5f * (image.at(x, yp) - image.at(x, ym));
        }
    }

    DescriptorMap out;
    out.width = w;
    out.height = h;
    out.dim = kDim;
    out.data.assign(static_cast<std::size_t>(w) * h * kDim, 0.0f);
    std::vector<double> hist(kDim);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::fill(hist.begin(), hist.end(), 0.0);
            for (int dy = -half; dy < half; ++dy) {
                const int sy = std::clamp(y + dy, 0, h - 1);
                const int cy = (dy + half) / cell;
                for (int dx = -half; dx < half; ++dx) {
                    const int sx = std::clamp(x + dx, 0, w - 1);
                    const float fx = gx[static_cast<std::size_t>(sy) * w + sx];
                    const float fy = gy[static_cast<std::size_t>(sy) * w + sx];
                    const double mag =
                        std::sqrt(static_cast<double>(fx) * fx + static_cast<double>(fy) * fy);
                    if (mag == 0.0) continue;
                    double angle = std::atan2(static_cast<double>(fy), static_cast<double>(fx));
                    if (angle < 0) angle += 2.0 * M_PI;
                    int bin = static_cast<int>(angle / (2.0 * M_PI) * kBins);
                    if (bin >= kBins) bin = kBins - 1;
                    const int cx = (dx + half) / cell;
                    hist[(cy * 4 + cx) * kBins + bin] += mag;
                }
            }
            double norm2 = 0.0;
            for (double v : hist) norm2 += v * v;
            if (norm2 == 0.0) continue;
            double inv = 1.0 / std::sqrt(norm2);
            double clipped2 = 0.0;
            for (int i = 0; i < kDim; ++i) {
                hist[i] = std::min(hist[i] * inv, 0.2);
                clipped2 += hist[i] * hist[i];
            }
            inv = 1.0 / std::sqrt(clipped2);
            float* d = out.at(x, y);
            for (int i = 0; i < kDim; ++i) d[i] = static_cast<float>(hist[i] * inv);
        }
    }
    return out;
}

Grid2D rasterize_ground_truth_serial(const AnnotationSet& ann, double sigma, int width,
                                     int height) {
    Grid2D density(width, height, 1, 0.0f);
    const double radius = 3.0 * sigma;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (const auto& [ax, ay] : ann.points) {
        const int x0 = std::max(0, static_cast<int>(std::ceil(ax - 0.5 - radius)));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(ax - 0.5 + radius)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(ay - 0.5 - radius)));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(ay - 0.5 + radius)));
        double mass = 0.0;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5) - ax;
                const double dy = (y + 0.5) - ay;
                mass += std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
        if (mass <= 0.0) continue;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5) - ax;
                const double dy = (y + 0.5) - ay;
                density.at(x, y) +=
                    static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2) / mass);
            }
        }
    }
    return density;
}

double grid_sum_serial(const Grid2D& grid, int channel) {
    double s = 0.0;
    for (int y = 0; y < grid.height(); ++y) {
        for (int x = 0; x < grid.width(); ++x) s += static_cast<double>(grid.at(x, y, channel));
    }
    return s;
}

WorldGrid velocity_variance_serial(const std::vector<VelocityField>& fields, double radius_m) {
    const WorldGrid& base = fields.at(0);
    const int rc = static_cast<int>(std::floor(radius_m / base.cell_size));
    const double r2 = radius_m * radius_m;
    WorldGrid out(base.origin_e, base.origin_n, base.cell_size, base.width, base.height, base.epsg,
                  1, 0.0f);
    out.nodata = base.nodata;
    for (int j = 0; j < base.height; ++j) {
        for (int i = 0; i < base.width; ++i) {
            double se = 0.0, sn = 0.0, se2 = 0.0, sn2 = 0.0;
            long long n = 0;
            for (int dj = -rc; dj <= rc; ++dj) {
                const int jj = j + dj;
                if (jj < 0 || jj >= base.height) continue;
                for (int di = -rc; di <= rc; ++di) {
                    const int ii = i + di;
                    if (ii < 0 || ii >= base.width) continue;
                    const double de = di * base.cell_size;
                    const double dn = dj * base.cell_size;
                    if (de * de + dn * dn > r2) continue;
                    for (const auto& f : fields) {
                        const float ve = f.at(ii, jj, 0);
                        const float vn = f.at(ii, jj, 1);
                        if (ve == f.nodata || vn == f.nodata) continue;
                        se += ve;
                        sn += vn;
                        se2 += static_cast<double>(ve) * ve;
                        sn2 += static_cast<double>(vn) * vn;
                        ++n;
                    }
                }
            }
            if (n < 2) {
                out.at(i, j) = 0.0f;
            } else {
                const double me = se / n, mn = sn / n;
                out.at(i, j) = static_cast<float>(
                    std::max((se2 / n - me * me) + (sn2 / n - mn * mn), 0.0));
            }
        }
    }
    return out;
}

} // namespace crowdflow::ref
