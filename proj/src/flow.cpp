#include "crowdflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "crowdflow/error.hpp"

namespace crowdflow {

void FlowParams::validate() const {
    if (!(tau <= 0.25) || !(tau > 0.0)) throw validation_error("FlowParams: tau must be in (0, 0.25]");
    if (!(pyramid_scale > 0.0) || !(pyramid_scale < 1.0)) {
        throw validation_error("FlowParams: pyramid scale must be in (0, 1)");
    }
    if (frame_gap < 1) throw validation_error("FlowParams: frame gap must be >= 1");
    if (!(lambda > 0.0) || !(theta > 0.0)) throw validation_error("FlowParams: lambda and theta must be positive");
    if (warps < 1 || inner_iters < 1) throw validation_error("FlowParams: warps and inner iterations must be >= 1");
    if (min_level_size < 4) throw validation_error("FlowParams: min level size must be >= 4");
    if (avg_window < 1) throw validation_error("FlowParams: averaging window must be >= 1");
}

namespace {

struct Image {
    int w = 0, h = 0;
    std::vector<float> v;

    Image() = default;
    Image(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0f) {}

    float at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
    float& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
};

float sample_clamped(const Image& img, int x, int y) {
    x = std::clamp(x, 0, img.w - 1);
    y = std::clamp(y, 0, img.h - 1);
    return img.at(x, y);
}

// Bilinear sample at continuous (x, y); out-of-range coordinates clamp to the
// border. `inside` reports whether the sample point was inside the image.
float bilinear(const Image& img, double x, double y, bool* inside = nullptr) {
    if (inside) *inside = x >= 0.0 && y >= 0.0 && x <= img.w - 1.0 && y <= img.h - 1.0;
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    const double a = sample_clamped(img, x0, y0);
    const double b = sample_clamped(img, x0 + 1, y0);
    const double c = sample_clamped(img, x0, y0 + 1);
    const double d = sample_clamped(img, x0 + 1, y0 + 1);
    return static_cast<float>((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
}

Image gaussian_blur(const Image& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) k /= ksum;

    Image tmp(src.w, src.h), out(src.w, src.h);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                s += kernel[i + radius] * sample_clamped(src, x + i, y);
            }
            tmp.at(x, y) = static_cast<float>(s);
        }
    }
#pragma omp parallel for schedule(static)
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                s += kernel[i + radius] * sample_clamped(tmp, x, y + i);
            }
            out.at(x, y) = static_cast<float>(s);
        }
    }
    return out;
}

Image downsample(const Image& src, int nw, int nh) {
    // Anti-alias then bilinear resample at the new grid's pixel centers.
    const double sx = static_cast<double>(src.w) / nw;
    const Image blurred = gaussian_blur(src, 0.8 * std::sqrt(std::max(sx * sx - 1.0, 0.0)));
    Image out(nw, nh);
    const double rx = static_cast<double>(src.w) / nw;
    const double ry = static_cast<double>(src.h) / nh;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < nh; ++y) {
        for (int x = 0; x < nw; ++x) {
            out.at(x, y) = bilinear(blurred, (x + 0.5) * rx - 0.5, (y + 0.5) * ry - 0.5);
        }
    }
    return out;
}

Image upsample(const Image& src, int nw, int nh, double value_scale) {
    Image out(nw, nh);
    const double rx = static_cast<double>(src.w) / nw;
    const double ry = static_cast<double>(src.h) / nh;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < nh; ++y) {
        for (int x = 0; x < nw; ++x) {
            out.at(x, y) = static_cast<float>(
                value_scale * bilinear(src, (x + 0.5) * rx - 0.5, (y + 0.5) * ry - 0.5));
        }
    }
    return out;
}

// One pyramid level of the duality-based TV-L1 scheme.
void solve_level(const Image& i1, const Image& i2, Image& u1, Image& u2, const FlowParams& p) {
    const int w = i1.w, h = i1.h;
    const std::size_t size = static_cast<std::size_t>(w) * h;

    Image i2x(w, h), i2y(w, h);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            i2x.at(x, y) = 0.5f * (sample_clamped(i2, x + 1, y) - sample_clamped(i2, x - 1, y));
            i2y.at(x, y) = 0.5f * (sample_clamped(i2, x, y + 1) - sample_clamped(i2, x, y - 1));
        }
    }

    std::vector<float> p11(size, 0.0f), p12(size, 0.0f), p21(size, 0.0f), p22(size, 0.0f);
    Image i2w(w, h), i2wx(w, h), i2wy(w, h);
    std::vector<float> rho_c(size), grad2(size), v1(size), v2(size), div1(size), div2(size);
    std::vector<char> occluded(size);

    const double lt = p.lambda * p.theta;
    const double taut = p.tau / p.theta;

    for (int warp = 0; warp < p.warps; ++warp) {
        // Linearize the residual at the current flow.
#pragma omp parallel for schedule(static)
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const double sx = x + u1.at(x, y);
                const double sy = y + u2.at(x, y);
                bool inside = true;
                i2w.at(x, y) = bilinear(i2, sx, sy, &inside);
                i2wx.at(x, y) = bilinear(i2x, sx, sy);
                i2wy.at(x, y) = bilinear(i2y, sx, sy);
                occluded[i] = inside ? 0 : 1;
                if (!inside) {
                    // Data term disabled for samples that left the image.
                    i2wx.at(x, y) = 0.0f;
                    i2wy.at(x, y) = 0.0f;
                }
                const double gx = i2wx.at(x, y), gy = i2wy.at(x, y);
                grad2[i] = static_cast<float>(gx * gx + gy * gy);
                rho_c[i] = static_cast<float>(i2w.at(x, y) - gx * u1.at(x, y) -
                                              gy * u2.at(x, y) - i1.at(x, y));
                if (occluded[i]) rho_c[i] = 0.0f;
            }
        }

        for (int iter = 0; iter < p.inner_iters; ++iter) {
            // Thresholding step on the data term.
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const double rho =
                        rho_c[i] + i2wx.at(x, y) * u1.at(x, y) + i2wy.at(x, y) * u2.at(x, y);
                    double d1 = 0.0, d2 = 0.0;
                    if (!occluded[i]) {
                        if (rho < -lt * grad2[i]) {
                            d1 = lt * i2wx.at(x, y);
                            d2 = lt * i2wy.at(x, y);
                        } else if (rho > lt * grad2[i]) {
                            d1 = -lt * i2wx.at(x, y);
                            d2 = -lt * i2wy.at(x, y);
                        } else if (grad2[i] > 1e-10f) {
                            d1 = -rho / grad2[i] * i2wx.at(x, y);
                            d2 = -rho / grad2[i] * i2wy.at(x, y);
                        }
                    }
                    v1[i] = static_cast<float>(u1.at(x, y) + d1);
                    v2[i] = static_cast<float>(u2.at(x, y) + d2);
                }
            }
            // u = v + theta * div(p); divergence with backward differences.
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const double dx1 = p11[i] - (x > 0 ? p11[i - 1] : 0.0f);
                    const double dy1 = p12[i] - (y > 0 ? p12[i - w] : 0.0f);
                    const double dx2 = p21[i] - (x > 0 ? p21[i - 1] : 0.0f);
                    const double dy2 = p22[i] - (y > 0 ? p22[i - w] : 0.0f);
                    div1[i] = static_cast<float>(dx1 + dy1);
                    div2[i] = static_cast<float>(dx2 + dy2);
                }
            }
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    u1.at(x, y) = v1[i] + static_cast<float>(p.theta) * div1[i];
                    u2.at(x, y) = v2[i] + static_cast<float>(p.theta) * div2[i];
                }
            }
            // Dual ascent on the total-variation term (forward differences).
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const double u1x = (x + 1 < w ? u1.at(x + 1, y) : u1.at(x, y)) - u1.at(x, y);
                    const double u1y = (y + 1 < h ? u1.at(x, y + 1) : u1.at(x, y)) - u1.at(x, y);
                    const double u2x = (x + 1 < w ? u2.at(x + 1, y) : u2.at(x, y)) - u2.at(x, y);
                    const double u2y = (y + 1 < h ? u2.at(x, y + 1) : u2.at(x, y)) - u2.at(x, y);
                    const double n1 = 1.0 + taut * std::sqrt(u1x * u1x + u1y * u1y);
                    const double n2 = 1.0 + taut * std::sqrt(u2x * u2x + u2y * u2y);
                    p11[i] = static_cast<float>((p11[i] + taut * u1x) / n1);
                    p12[i] = static_cast<float>((p12[i] + taut * u1y) / n1);
                    p21[i] = static_cast<float>((p21[i] + taut * u2x) / n2);
                    p22[i] = static_cast<float>((p22[i] + taut * u2y) / n2);
                }
            }
        }
    }
}

Image grid_to_image(const Grid2D& g) {
    Image img(g.width(), g.height());
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 0; x < g.width(); ++x) img.at(x, y) = g.at(x, y);
    }
    return img;
}

} // namespace

FlowField tvl1_flow(const Grid2D& i1, const Grid2D& i2, const FlowParams& params) {
    params.validate();
    if (i1.channels() != 1 || i2.channels() != 1) {
        throw validation_error("tvl1_flow: frames must be single-channel (see to_grayscale)");
    }
    if (i1.width() != i2.width() || i1.height() != i2.height()) {
        throw validation_error("tvl1_flow: frame dimension mismatch");
    }
    for (const Grid2D* g : {&i1, &i2}) {
        for (float v : g->data()) {
            if (!(v >= -1e-6f && v <= 1.0f + 1e-6f)) {
                throw validation_error("tvl1_flow: intensities must be normalized to [0, 1]");
            }
        }
    }

    // Build the pyramid.
    std::vector<Image> pyr1, pyr2;
    pyr1.push_back(grid_to_image(i1));
    pyr2.push_back(grid_to_image(i2));
    while (true) {
        const Image& prev = pyr1.back();
        const int nw = static_cast<int>(std::lround(prev.w * params.pyramid_scale));
        const int nh = static_cast<int>(std::lround(prev.h * params.pyramid_scale));
        if (std::min(nw, nh) < params.min_level_size) break;
        pyr1.push_back(downsample(pyr1.back(), nw, nh));
        pyr2.push_back(downsample(pyr2.back(), nw, nh));
    }

    const int levels = static_cast<int>(pyr1.size());
    Image u1(pyr1[levels - 1].w, pyr1[levels - 1].h);
    Image u2(pyr1[levels - 1].w, pyr1[levels - 1].h);
    for (int s = levels - 1; s >= 0; --s) {
        solve_level(pyr1[s], pyr2[s], u1, u2, params);
        if (s == 0) break;
        const int nw = pyr1[s - 1].w, nh = pyr1[s - 1].h;
        Image nu1 = upsample(u1, nw, nh, static_cast<double>(nw) / u1.w);
        Image nu2 = upsample(u2, nw, nh, static_cast<double>(nh) / u2.h);
        u1 = std::move(nu1);
        u2 = std::move(nu2);
    }

    FlowField out(i1.width(), i1.height(), 2);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            out.at(x, y, 0) = u1.at(x, y);
            out.at(x, y, 1) = u2.at(x, y);
        }
    }
    return out;
}

FlowField average_flows(const std::vector<FlowField>& fields) {
    if (fields.empty()) throw validation_error("average_flows: empty list");
    const int w = fields[0].width(), h = fields[0].height();
    for (const auto& f : fields) {
        if (f.width() != w || f.height() != h || f.channels() != 2) {
            throw validation_error("average_flows: all fields must be 2-channel and equally sized");
        }
    }
    FlowField out(w, h, 2);
    const double inv = 1.0 / fields.size();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx = 0.0, sy = 0.0;
            for (const auto& f : fields) {
                sx += f.at(x, y, 0);
                sy += f.at(x, y, 1);
            }
            out.at(x, y, 0) = static_cast<float>(sx * inv);
            out.at(x, y, 1) = static_cast<float>(sy * inv);
        }
    }
    return out;
}

double flow_energy(const Grid2D& i1, const Grid2D& i2, const FlowField& flow, double lambda) {
    if (!i1.same_shape(i2) || flow.width() != i1.width() || flow.height() != i1.height() ||
        flow.channels() != 2) {
        throw validation_error("flow_energy: shape mismatch");
    }
    const Image img2 = grid_to_image(i2);
    const int w = i1.width(), h = i1.height();
    std::vector<double> rows(h, 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double s = 0.0;
        for (int x = 0; x < w; ++x) {
            const double warped = bilinear(img2, x + flow.at(x, y, 0), y + flow.at(x, y, 1));
            s += lambda * std::abs(warped - i1.at(x, y));
            const double u1x = (x + 1 < w ? flow.at(x + 1, y, 0) : flow.at(x, y, 0)) - flow.at(x, y, 0);
            const double u1y = (y + 1 < h ? flow.at(x, y + 1, 0) : flow.at(x, y, 0)) - flow.at(x, y, 0);
            const double u2x = (x + 1 < w ? flow.at(x + 1, y, 1) : flow.at(x, y, 1)) - flow.at(x, y, 1);
            const double u2y = (y + 1 < h ? flow.at(x, y + 1, 1) : flow.at(x, y, 1)) - flow.at(x, y, 1);
            s += std::sqrt(u1x * u1x + u1y * u1y) + std::sqrt(u2x * u2x + u2y * u2y);
        }
        rows[y] = s;
    }
    double total = 0.0;
    for (double r : rows) total += r;
    return total;
}

Grid2D to_grayscale(const Grid2D& image) {
    if (image.channels() == 1) return image;
    Grid2D out(image.width(), image.height(), 1);
    const double inv = 1.0 / image.channels();
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            double s = 0.0;
            for (int c = 0; c < image.channels(); ++c) s += image.at(x, y, c);
            out.at(x, y) = static_cast<float>(s * inv);
        }
    }
    return out;
}

} // namespace crowdflow
