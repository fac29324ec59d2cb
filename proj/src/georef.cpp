#include "crowdflow/georef.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "crowdflow/error.hpp"

namespace crowdflow {

void CameraPose::validate() const {
    if (!(focal_px > 0.0)) throw validation_error("CameraPose: focal length must be positive");
    if (!(center_h > terrain_h)) {
        throw validation_error("CameraPose: camera must be above the terrain plane");
    }
}

WorldGrid::WorldGrid(double oe, double on, double cs, int w, int h, int epsg_code, int ch,
                     float fill)
    : origin_e(oe), origin_n(on), cell_size(cs), width(w), height(h), epsg(epsg_code),
      channels(ch) {
    if (!(cs > 0.0)) throw validation_error("WorldGrid: cell size must be positive");
    if (w <= 0 || h <= 0 || ch < 1) throw validation_error("WorldGrid: bad dimensions");
    values.assign(static_cast<std::size_t>(w) * h * ch, fill);
}

bool WorldGrid::cell_of(double e, double n, int& i, int& j) const {
    const double fi = std::floor((e - origin_e) / cell_size);
    const double fj = std::floor((n - origin_n) / cell_size);
    i = static_cast<int>(fi);
    j = static_cast<int>(fj);
    return fi >= 0 && fj >= 0 && i < width && j < height;
}

bool WorldGrid::same_frame(const WorldGrid& o) const {
    return width == o.width && height == o.height && origin_e == o.origin_e &&
           origin_n == o.origin_n && cell_size == o.cell_size && epsg == o.epsg;
}

namespace {

// Smallest-eigenvalue eigenvector of a symmetric matrix via cyclic Jacobi
// rotations. Dimensions here are tiny (9x9), so plain O(n^3) sweeps suffice.
std::vector<double> smallest_eigenvector(std::vector<double> a, int n) {
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    const auto A = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
    const auto V = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        }
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(A(p, q)) < 1e-30) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = A(i, p), aiq = A(i, q);
                    A(i, p) = c * aip - s * aiq;
                    A(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = A(p, i), aqi = A(q, i);
                    A(p, i) = c * api - s * aqi;
                    A(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = V(i, p), viq = V(i, q);
                    V(i, p) = c * vip - s * viq;
                    V(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (A(i, i) < A(best, best)) best = i;
    }
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = V(i, best);
    return out;
}

struct Normalization {
    double cx = 0.0, cy = 0.0, scale = 1.0;
};

Normalization normalize_points(std::vector<std::pair<double, double>>& pts) {
    Normalization nrm;
    for (const auto& [x, y] : pts) {
        nrm.cx += x;
        nrm.cy += y;
    }
    nrm.cx /= pts.size();
    nrm.cy /= pts.size();
    double mean_dist = 0.0;
    for (const auto& [x, y] : pts) mean_dist += std::hypot(x - nrm.cx, y - nrm.cy);
    mean_dist /= pts.size();
    nrm.scale = mean_dist > 1e-300 ? std::sqrt(2.0) / mean_dist : 1.0;
    for (auto& [x, y] : pts) {
        x = (x - nrm.cx) * nrm.scale;
        y = (y - nrm.cy) * nrm.scale;
    }
    return nrm;
}

double det3(const std::array<double, 9>& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

} // namespace

Homography fit_homography(const std::vector<std::pair<std::pair<double, double>,
                                                      std::pair<double, double>>>& pairs) {
    const int n = static_cast<int>(pairs.size());
    if (n < 4) throw validation_error("fit_homography: need at least 4 correspondences");

    std::vector<std::pair<double, double>> px(n), wd(n);
    for (int i = 0; i < n; ++i) {
        px[i] = pairs[i].first;
        wd[i] = pairs[i].second;
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (std::hypot(px[i].first - px[j].first, px[i].second - px[j].second) < 1e-9) {
                throw validation_error("fit_homography: duplicate pixel point");
            }
        }
    }
    // With only 4 pairs any collinear triple is fatal; larger sets tolerate
    // collinear subsets as long as the normal system keeps full rank.
    if (n == 4) {
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                for (int k = j + 1; k < n; ++k) {
                    const double cross = (px[j].first - px[i].first) * (px[k].second - px[i].second) -
                                         (px[j].second - px[i].second) * (px[k].first - px[i].first);
                    if (std::abs(cross) < 1e-9) {
                        throw validation_error("fit_homography: three pixel points are collinear");
                    }
                }
            }
        }
    }

    const Normalization np = normalize_points(px);
    const Normalization nw = normalize_points(wd);

    // 9x9 normal matrix of the DLT system.
    std::vector<double> ata(81, 0.0);
    const auto accumulate_row = [&](const std::array<double, 9>& row) {
        for (int r = 0; r < 9; ++r) {
            for (int c = 0; c < 9; ++c) ata[static_cast<std::size_t>(r) * 9 + c] += row[r] * row[c];
        }
    };
    for (int i = 0; i < n; ++i) {
        const double u = px[i].first, v = px[i].second;
        const double X = wd[i].first, Y = wd[i].second;
        accumulate_row({-u, -v, -1, 0, 0, 0, u * X, v * X, X});
        accumulate_row({0, 0, 0, -u, -v, -1, u * Y, v * Y, Y});
    }
    const std::vector<double> hvec = smallest_eigenvector(std::move(ata), 9);

    // Denormalize: H = T_world^-1 * Hn * T_pixel.
    std::array<double, 9> hn;
    for (int i = 0; i < 9; ++i) hn[i] = hvec[i];
    const double sp = np.scale, sw = nw.scale;
    std::array<double, 9> tp = {sp, 0, -sp * np.cx, 0, sp, -sp * np.cy, 0, 0, 1};
    std::array<double, 9> twinv = {1.0 / sw, 0, nw.cx, 0, 1.0 / sw, nw.cy, 0, 0, 1};
    const auto matmul = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
        std::array<double, 9> m{};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                for (int k = 0; k < 3; ++k) m[r * 3 + c] += a[r * 3 + k] * b[k * 3 + c];
            }
        }
        return m;
    };
    std::array<double, 9> h = matmul(twinv, matmul(hn, tp));

    if (std::abs(h[8]) < 1e-15) throw validation_error("fit_homography: degenerate configuration");
    for (double& x : h) x /= h[8];
    if (std::abs(det3(h)) < 1e-12) {
        throw validation_error("fit_homography: resulting homography is singular");
    }

    Homography out;
    out.h = h;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto [e, nn] = pixel_to_world(out, pairs[i].first.first, pairs[i].first.second);
        ss += (e - pairs[i].second.first) * (e - pairs[i].second.first) +
              (nn - pairs[i].second.second) * (nn - pairs[i].second.second);
    }
    out.rms_residual = std::sqrt(ss / n);
    return out;
}

Homography invert(const Homography& hg) {
    const auto& m = hg.h;
    const double d = det3(m);
    if (std::abs(d) < 1e-15) throw validation_error("invert: singular homography");
    std::array<double, 9> inv;
    inv[0] = (m[4] * m[8] - m[5] * m[7]) / d;
    inv[1] = (m[2] * m[7] - m[1] * m[8]) / d;
    inv[2] = (m[1] * m[5] - m[2] * m[4]) / d;
    inv[3] = (m[5] * m[6] - m[3] * m[8]) / d;
    inv[4] = (m[0] * m[8] - m[2] * m[6]) / d;
    inv[5] = (m[2] * m[3] - m[0] * m[5]) / d;
    inv[6] = (m[3] * m[7] - m[4] * m[6]) / d;
    inv[7] = (m[1] * m[6] - m[0] * m[7]) / d;
    inv[8] = (m[0] * m[4] - m[1] * m[3]) / d;
    if (std::abs(inv[8]) > 1e-15) {
        for (double& x : inv) x /= inv[8];
    }
    Homography out;
    out.h = inv;
    return out;
}

std::pair<double, double> pixel_to_world(const Homography& h, double u, double v) {
    const double X = h.h[0] * u + h.h[1] * v + h.h[2];
    const double Y = h.h[3] * u + h.h[4] * v + h.h[5];
    const double W = h.h[6] * u + h.h[7] * v + h.h[8];
    if (std::abs(W) < 1e-12) {
        throw validation_error("pixel_to_world: point maps to infinity");
    }
    return {X / W, Y / W};
}

std::pair<double, double> world_to_pixel(const Homography& h, double e, double n) {
    return pixel_to_world(invert(h), e, n);
}

std::pair<double, double> pixel_to_world(const CameraPose& pose, double u, double v) {
    pose.validate();
    // Camera-frame ray through the pixel; at zero rotation camera x->east,
    // y->south, z->down.
    const double dx = (u - pose.pp_u) / pose.focal_px;
    const double dy = (v - pose.pp_v) / pose.focal_px;
    const double base_e = dx;
    const double base_n = -dy;
    const double base_u = -1.0;

    const double co = std::cos(pose.omega), so = std::sin(pose.omega);
    const double cp = std::cos(pose.phi), sp = std::sin(pose.phi);
    const double ck = std::cos(pose.kappa), sk = std::sin(pose.kappa);
    // R = Rz(kappa) * Ry(phi) * Rx(omega), applied to ENU vectors.
    const double r00 = ck * cp, r01 = ck * sp * so - sk * co, r02 = ck * sp * co + sk * so;
    const double r10 = sk * cp, r11 = sk * sp * so + ck * co, r12 = sk * sp * co - ck * so;
    const double r20 = -sp, r21 = cp * so, r22 = cp * co;

    const double de = r00 * base_e + r01 * base_n + r02 * base_u;
    const double dn = r10 * base_e + r11 * base_n + r12 * base_u;
    const double du = r20 * base_e + r21 * base_n + r22 * base_u;

    if (du >= -1e-12) {
        throw validation_error("pixel_to_world: ray does not intersect the terrain plane");
    }
    const double t = (pose.terrain_h - pose.center_h) / du;
    return {pose.center_e + t * de, pose.center_n + t * dn};
}

std::pair<double, double> pixel_to_world(const PixelMapping& mapping, double u, double v) {
    return std::visit([&](const auto& m) { return pixel_to_world(m, u, v); }, mapping);
}

WorldGrid fit_world_grid(const PixelMapping& mapping, int width, int height, double cell_size,
                         int epsg, int channels) {
    double min_e = std::numeric_limits<double>::infinity();
    double max_e = -min_e, min_n = min_e, max_n = -min_e;
    bool any = false;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            try {
                const auto [e, n] = pixel_to_world(mapping, x + 0.5, y + 0.5);
                min_e = std::min(min_e, e);
                max_e = std::max(max_e, e);
                min_n = std::min(min_n, n);
                max_n = std::max(max_n, n);
                any = true;
            } catch (const validation_error&) {
                // above-horizon pixels contribute nothing to the footprint
            }
        }
    }
    if (!any) throw validation_error("fit_world_grid: empty footprint");
    const double oe = std::floor(min_e / cell_size) * cell_size - cell_size;
    const double on = std::floor(min_n / cell_size) * cell_size - cell_size;
    const int w = static_cast<int>(std::ceil((max_e - oe) / cell_size)) + 1;
    const int h = static_cast<int>(std::ceil((max_n - on) / cell_size)) + 1;
    return WorldGrid(oe, on, cell_size, w, h, epsg, channels);
}

WorldGrid rectify_density(const Grid2D& density, const PixelMapping& mapping,
                          const WorldGrid& grid_spec, double sigma_w, RectifyStats* stats) {
    if (density.channels() != 1) throw validation_error("rectify_density: density must be single-channel");
    if (sigma_w < 0.0) throw validation_error("rectify_density: sigma_w must be >= 0");
    const int iw = density.width(), ih = density.height();

    // Project every pixel center first (parallel), then splat serially in a
    // fixed order so sums are reproducible.
    std::vector<int> cell_i(static_cast<std::size_t>(iw) * ih), cell_j(cell_i.size());
    std::vector<char> ok(cell_i.size(), 0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < ih; ++y) {
        for (int x = 0; x < iw; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * iw + x;
            try {
                const auto [e, n] = pixel_to_world(mapping, x + 0.5, y + 0.5);
                int ci, cj;
                if (grid_spec.cell_of(e, n, ci, cj)) {
                    cell_i[idx] = ci;
                    cell_j[idx] = cj;
                    ok[idx] = 1;
                } else {
                    ok[idx] = 2; // projected fine but landed outside the grid
                }
            } catch (const validation_error&) {
                ok[idx] = 0;
            }
        }
    }

    WorldGrid out(grid_spec.origin_e, grid_spec.origin_n, grid_spec.cell_size, grid_spec.width,
                  grid_spec.height, grid_spec.epsg, 1, 0.0f);
    out.nodata = grid_spec.nodata;
    std::vector<double> acc(static_cast<std::size_t>(out.width) * out.height, 0.0);
    double in_mass = 0.0, out_mass = 0.0;
    long long skipped = 0;
    for (int y = 0; y < ih; ++y) {
        for (int x = 0; x < iw; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * iw + x;
            const double v = density.at(x, y);
            if (ok[idx] == 1) {
                acc[static_cast<std::size_t>(cell_j[idx]) * out.width + cell_i[idx]] += v;
                in_mass += v;
            } else if (ok[idx] == 2) {
                out_mass += v;
            } else {
                ++skipped;
                out_mass += v;
            }
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
    if (in_mass == 0.0 && out_mass > 0.0) {
        throw validation_error("rectify_density: no density pixel lands inside the world grid");
    }
    if (stats) {
        stats->in_mass = in_mass;
        stats->out_of_grid_mass = out_mass;
        stats->skipped_pixels = skipped;
    }

    if (sigma_w > 0.0) {
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_w)));
        std::vector<double> kernel(2 * radius + 1);
        double ks = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma_w * sigma_w));
            ks += kernel[i + radius];
        }
        for (double& k : kernel) k /= ks;

        // Out-of-grid taps are dropped (truncation); the rescale below makes
        // up for the mass they would have carried across the border.
        WorldGrid tmp = out;
#pragma omp parallel for schedule(static)
        for (int j = 0; j < out.height; ++j) {
            for (int i = 0; i < out.width; ++i) {
                double s = 0.0;
                for (int d = -radius; d <= radius; ++d) {
                    const int ii = i + d;
                    if (ii < 0 || ii >= out.width) continue;
                    s += kernel[d + radius] * out.at(ii, j);
                }
                tmp.at(i, j) = static_cast<float>(s);
            }
        }
#pragma omp parallel for schedule(static)
        for (int j = 0; j < out.height; ++j) {
            for (int i = 0; i < out.width; ++i) {
                double s = 0.0;
                for (int d = -radius; d <= radius; ++d) {
                    const int jj = j + d;
                    if (jj < 0 || jj >= out.height) continue;
                    s += kernel[d + radius] * tmp.at(i, jj);
                }
                out.at(i, j) = static_cast<float>(s);
            }
        }
        // Border truncation loses kernel mass; rescale to conserve exactly.
        double smoothed_mass = 0.0;
        for (int j = 0; j < out.height; ++j) {
            for (int i = 0; i < out.width; ++i) smoothed_mass += out.at(i, j);
        }
        if (smoothed_mass > 0.0 && in_mass > 0.0) {
            const double scale = in_mass / smoothed_mass;
            for (float& v : out.values) v = static_cast<float>(v * scale);
        }
    }
    return out;
}

VelocityField rectify_motion(const FlowField& flow, const PixelMapping& mapping_t,
                             const PixelMapping& mapping_t_gap, double dt,
                             const WorldGrid& grid_spec, RectifyStats* stats) {
    if (!(dt > 0.0)) throw validation_error("rectify_motion: dt must be positive");
    if (flow.channels() != 2) throw validation_error("rectify_motion: flow must have 2 channels");
    const int iw = flow.width(), ih = flow.height();

    std::vector<double> ve(static_cast<std::size_t>(iw) * ih), vn(ve.size());
    std::vector<int> cell_i(ve.size()), cell_j(ve.size());
    std::vector<char> ok(ve.size(), 0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < ih; ++y) {
        for (int x = 0; x < iw; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * iw + x;
            try {
                const auto [e1, n1] = pixel_to_world(mapping_t, x + 0.5, y + 0.5);
                const auto [e2, n2] = pixel_to_world(
                    mapping_t_gap, x + 0.5 + flow.at(x, y, 0), y + 0.5 + flow.at(x, y, 1));
                int ci, cj;
                if (!grid_spec.cell_of(e1, n1, ci, cj)) continue;
                ve[idx] = (e2 - e1) / dt;
                vn[idx] = (n2 - n1) / dt;
                cell_i[idx] = ci;
                cell_j[idx] = cj;
                ok[idx] = 1;
            } catch (const validation_error&) {
                ok[idx] = 0;
            }
        }
    }

    const std::size_t ncells = static_cast<std::size_t>(grid_spec.width) * grid_spec.height;
    std::vector<double> sum_e(ncells, 0.0), sum_n(ncells, 0.0);
    std::vector<long long> count(ncells, 0);
    long long skipped = 0;
    for (std::size_t idx = 0; idx < ok.size(); ++idx) {
        if (!ok[idx]) {
            ++skipped;
            continue;
        }
        const std::size_t cell = static_cast<std::size_t>(cell_j[idx]) * grid_spec.width + cell_i[idx];
        sum_e[cell] += ve[idx];
        sum_n[cell] += vn[idx];
        ++count[cell];
    }

    VelocityField out(grid_spec.origin_e, grid_spec.origin_n, grid_spec.cell_size, grid_spec.width,
                      grid_spec.height, grid_spec.epsg, 2, 0.0f);
    out.nodata = grid_spec.nodata;
    for (int j = 0; j < out.height; ++j) {
        for (int i = 0; i < out.width; ++i) {
            const std::size_t cell = static_cast<std::size_t>(j) * out.width + i;
            if (count[cell] == 0) {
                out.at(i, j, 0) = out.nodata;
                out.at(i, j, 1) = out.nodata;
            } else {
                out.at(i, j, 0) = static_cast<float>(sum_e[cell] / count[cell]);
                out.at(i, j, 1) = static_cast<float>(sum_n[cell] / count[cell]);
            }
        }
    }
    if (stats) {
        stats->skipped_pixels = skipped;
        stats->in_mass = 0.0;
        stats->out_of_grid_mass = 0.0;
    }
    return out;
}

WorldGrid density_to_per_m2(const WorldGrid& mass) {
    WorldGrid out = mass;
    const double inv_area = 1.0 / (mass.cell_size * mass.cell_size);
    for (float& v : out.values) {
        if (v != mass.nodata) v = static_cast<float>(v * inv_area);
    }
    return out;
}

// --- export / import -----------------------------------------------------------

namespace {

void export_esri_channel(const WorldGrid& grid, int channel, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("export_world_grid: cannot open '" + path + "'");
    char buf[64];
    out << "ncols " << grid.width << "\n";
    out << "nrows " << grid.height << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", grid.origin_e);
    out << "xllcorner " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", grid.origin_n);
    out << "yllcorner " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", grid.cell_size);
    out << "cellsize " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(grid.nodata));
    out << "NODATA_value " << buf << "\n";
    // Rows north to south.
    for (int j = grid.height - 1; j >= 0; --j) {
        for (int i = 0; i < grid.width; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(grid.at(i, j, channel)));
            out << buf << (i + 1 == grid.width ? '\n' : ' ');
        }
    }
    if (!out) throw io_error("export_world_grid: write failed for '" + path + "'");
    std::ofstream prj(path + ".prj", std::ios::trunc);
    if (!prj) throw io_error("export_world_grid: cannot open '" + path + ".prj'");
    prj << "EPSG:" << grid.epsg << "\n";
}

std::string channel_path(const std::string& path, int channel) {
    const std::size_t dot = path.find_last_of('.');
    const std::size_t slash = path.find_last_of('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
        return path + "_c" + std::to_string(channel);
    }
    return path.substr(0, dot) + "_c" + std::to_string(channel) + path.substr(dot);
}

} // namespace

void export_world_grid(const WorldGrid& grid, const std::string& path, WorldExportFormat format) {
    if (grid.width <= 0) throw validation_error("export_world_grid: empty grid");
    if (format == WorldExportFormat::EsriAscii) {
        if (grid.channels == 1) {
            export_esri_channel(grid, 0, path);
        } else {
            for (int c = 0; c < grid.channels; ++c) {
                export_esri_channel(grid, c, channel_path(path, c));
            }
        }
        return;
    }
    // GeoJSON: one point feature per cell (center coordinates); nodata cells
    // are skipped.
    nlohmann::ordered_json root;
    root["type"] = "FeatureCollection";
    root["properties"] = {{"epsg", grid.epsg}, {"cell_size", grid.cell_size}};
    nlohmann::ordered_json features = nlohmann::ordered_json::array();
    for (int j = 0; j < grid.height; ++j) {
        for (int i = 0; i < grid.width; ++i) {
            bool any_nodata = false;
            for (int c = 0; c < grid.channels; ++c) any_nodata |= grid.is_nodata(i, j, c);
            if (any_nodata) continue;
            nlohmann::ordered_json f;
            f["type"] = "Feature";
            f["geometry"] = {{"type", "Point"},
                             {"coordinates", {grid.cell_center_e(i), grid.cell_center_n(j)}}};
            if (grid.channels == 1) {
                f["properties"] = {{"value", grid.at(i, j)}};
            } else if (grid.channels == 2) {
                f["properties"] = {{"v_east", grid.at(i, j, 0)}, {"v_north", grid.at(i, j, 1)}};
            } else {
                nlohmann::ordered_json props;
                for (int c = 0; c < grid.channels; ++c) {
                    props["c" + std::to_string(c)] = grid.at(i, j, c);
                }
                f["properties"] = props;
            }
            features.push_back(std::move(f));
        }
    }
    root["features"] = std::move(features);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("export_world_grid: cannot open '" + path + "'");
    out << root.dump(1) << "\n";
    if (!out) throw io_error("export_world_grid: write failed for '" + path + "'");
}

WorldGrid import_esri_ascii(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("import_esri_ascii: cannot open '" + path + "'");
    std::string key;
    int ncols = 0, nrows = 0;
    double xll = 0.0, yll = 0.0, cell = 0.0, nodata = -9999.0;
    for (int line = 0; line < 6; ++line) {
        if (!(in >> key)) throw io_error("import_esri_ascii: truncated header in '" + path + "'");
        std::string lower;
        for (char ch : key) lower.push_back(static_cast<char>(std::tolower(ch)));
        if (lower == "ncols") in >> ncols;
        else if (lower == "nrows") in >> nrows;
        else if (lower == "xllcorner") in >> xll;
        else if (lower == "yllcorner") in >> yll;
        else if (lower == "cellsize") in >> cell;
        else if (lower == "nodata_value") in >> nodata;
        else throw io_error("import_esri_ascii: unexpected header key '" + key + "'");
        if (!in) throw io_error("import_esri_ascii: malformed header value in '" + path + "'");
    }
    if (ncols <= 0 || nrows <= 0 || !(cell > 0.0)) {
        throw io_error("import_esri_ascii: bad dimensions in '" + path + "'");
    }
    int epsg = 0;
    {
        std::ifstream prj(path + ".prj");
        std::string tag;
        if (prj && std::getline(prj, tag) && tag.rfind("EPSG:", 0) == 0) {
            epsg = std::atoi(tag.c_str() + 5);
        }
    }
    WorldGrid grid(xll, yll, cell, ncols, nrows, epsg > 0 ? epsg : 32633, 1);
    grid.nodata = static_cast<float>(nodata);
    for (int j = nrows - 1; j >= 0; --j) {
        for (int i = 0; i < ncols; ++i) {
            double v;
            if (!(in >> v)) throw io_error("import_esri_ascii: truncated data in '" + path + "'");
            grid.at(i, j) = static_cast<float>(v);
        }
    }
    return grid;
}

void save_mapping(const PixelMapping& mapping, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("save_mapping: cannot open '" + path + "'");
    char buf[64];
    if (std::holds_alternative<Homography>(mapping)) {
        const auto& h = std::get<Homography>(mapping);
        out << "HOMOG 1\n";
        for (int i = 0; i < 9; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", h.h[i]);
            out << buf << (i % 3 == 2 ? '\n' : ' ');
        }
    } else {
        const auto& p = std::get<CameraPose>(mapping);
        out << "POSE 1\n";
        const double vals[10] = {p.center_e, p.center_n, p.center_h, p.omega, p.phi,
                                 p.kappa,    p.focal_px, p.pp_u,     p.pp_v, p.terrain_h};
        for (int i = 0; i < 10; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", vals[i]);
            out << buf << (i + 1 == 10 ? '\n' : ' ');
        }
    }
    if (!out) throw io_error("save_mapping: write failed for '" + path + "'");
}

PixelMapping load_mapping(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_mapping: cannot open '" + path + "'");
    std::string kind;
    int version = 0;
    if (!(in >> kind >> version) || version != 1) {
        throw io_error("load_mapping: malformed mapping header in '" + path + "'");
    }
    if (kind == "HOMOG") {
        Homography h;
        for (int i = 0; i < 9; ++i) {
            if (!(in >> h.h[i])) throw io_error("load_mapping: truncated HOMOG in '" + path + "'");
        }
        if (std::abs(h.h[8]) < 1e-15) throw io_error("load_mapping: singular homography in '" + path + "'");
        for (double& x : h.h) x /= h.h[8];
        return h;
    }
    if (kind == "POSE") {
        CameraPose p;
        double vals[10];
        for (int i = 0; i < 10; ++i) {
            if (!(in >> vals[i])) throw io_error("load_mapping: truncated POSE in '" + path + "'");
        }
        p.center_e = vals[0];
        p.center_n = vals[1];
        p.center_h = vals[2];
        p.omega = vals[3];
        p.phi = vals[4];
        p.kappa = vals[5];
        p.focal_px = vals[6];
        p.pp_u = vals[7];
        p.pp_v = vals[8];
        p.terrain_h = vals[9];
        p.validate();
        return p;
    }
    throw io_error("load_mapping: unknown mapping kind '" + kind + "' in '" + path + "'");
}

} // namespace crowdflow
