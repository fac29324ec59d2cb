#include "crowdflow/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "crowdflow/error.hpp"
#include "crowdflow/rng.hpp"

namespace crowdflow {

FeatureIndexMap::FeatureIndexMap(int width, int height, std::vector<int> vocab_sizes)
    : width_(width), height_(height), vocab_sizes_(std::move(vocab_sizes)) {
    if (width <= 0 || height <= 0 || vocab_sizes_.empty()) {
        throw validation_error("FeatureIndexMap: empty dimensions or no channels");
    }
    offsets_.assign(vocab_sizes_.size() + 1, 0);
    for (std::size_t c = 0; c < vocab_sizes_.size(); ++c) {
        if (vocab_sizes_[c] < 1) throw validation_error("FeatureIndexMap: vocabulary size < 1");
        offsets_[c + 1] = offsets_[c] + vocab_sizes_[c];
    }
    indices_.assign(static_cast<std::size_t>(width) * height * vocab_sizes_.size(), 0);
}

void FeatureIndexMap::validate() const {
    const int c = channels();
    for (int ch = 0; ch < c; ++ch) {
        const int k = vocab_sizes_[ch];
        for (int y = 0; y < height_; ++y) {
            for (int x = 0; x < width_; ++x) {
                const std::int32_t v = at(x, y, ch);
                if (v < 0 || v >= k) {
                    throw validation_error("FeatureIndexMap: index out of vocabulary range");
                }
            }
        }
    }
}

FeatureIndexMap quantize_confidences(const Grid2D& conf, double min_conf, double max_conf,
                                     int bins) {
    if (conf.channels() != 1) throw validation_error("quantize_confidences: input must be single-channel");
    if (!(min_conf < max_conf)) throw validation_error("quantize_confidences: min_conf must be < max_conf");
    if (bins < 2) throw validation_error("quantize_confidences: bins must be >= 2");
    conf.require_finite("quantize_confidences");

    FeatureIndexMap map(conf.width(), conf.height(), {bins});
    const double span = max_conf - min_conf;
    const int w = conf.width(), h = conf.height();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double c = std::clamp(static_cast<double>(conf.at(x, y)), min_conf, max_conf);
            // std::round is half-away-from-zero, the documented rule.
            map.at(x, y) = static_cast<std::int32_t>(std::round((c - min_conf) / span * (bins - 1)));
        }
    }
    return map;
}

DescriptorMap dense_descriptors(const Grid2D& image, int patch) {
    if (image.channels() != 1) throw validation_error("dense_descriptors: input must be single-channel");
    if (patch < 4 || patch % 4 != 0) throw validation_error("dense_descriptors: patch size must be a positive multiple of 4");
    if (patch >= image.width() || patch >= image.height()) {
        throw validation_error("dense_descriptors: patch larger than image");
    }
    const int w = image.width(), h = image.height();
    const int half = patch / 2;
    const int cell = patch / 4;
    constexpr int kBins = 8;
    constexpr int kDim = 128;

    // Precompute gradients once (central differences, edge clamped).
    std::vector<float> gx(static_cast<std::size_t>(w) * h), gy(gx.size());
#pragma omp parallel for schedule(static)
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

#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double hist[kDim];
        for (int x = 0; x < w; ++x) {
            std::fill(hist, hist + kDim, 0.0);
            for (int dy = -half; dy < half; ++dy) {
                const int sy = std::clamp(y + dy, 0, h - 1);
                const int cy = (dy + half) / cell;
                for (int dx = -half; dx < half; ++dx) {
                    const int sx = std::clamp(x + dx, 0, w - 1);
                    const float fx = gx[static_cast<std::size_t>(sy) * w + sx];
                    const float fy = gy[static_cast<std::size_t>(sy) * w + sx];
                    const double mag = std::sqrt(static_cast<double>(fx) * fx + static_cast<double>(fy) * fy);
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
            float* d = out.at(x, y);
            if (norm2 == 0.0) continue; // textureless patch -> zero descriptor
            double inv = 1.0 / std::sqrt(norm2);
            double clipped2 = 0.0;
            for (int i = 0; i < kDim; ++i) {
                const double v = std::min(hist[i] * inv, 0.2);
                hist[i] = v;
                clipped2 += v * v;
            }
            inv = 1.0 / std::sqrt(clipped2);
            for (int i = 0; i < kDim; ++i) d[i] = static_cast<float>(hist[i] * inv);
        }
    }
    return out;
}

namespace {

double sq_distance(const float* a, const float* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

} // namespace

Codebook build_codebook(const std::vector<float>& samples, int n, int dim, int k,
                        std::uint64_t seed) {
    if (n < k) throw validation_error("build_codebook: fewer samples than prototypes");
    if (k < 1 || dim < 1) throw validation_error("build_codebook: k and dim must be >= 1");
    if (samples.size() != static_cast<std::size_t>(n) * dim) {
        throw validation_error("build_codebook: sample buffer size mismatch");
    }
    const auto row = [&](int i) { return &samples[static_cast<std::size_t>(i) * dim]; };

    Codebook book;
    book.k = k;
    book.dim = dim;
    book.seed = seed;
    book.prototypes.assign(static_cast<std::size_t>(k) * dim, 0.0f);

    Rng rng(seed);

    // k-means++ seeding: first center uniform, then proportional to squared
    // distance from the nearest chosen center.
    std::vector<int> chosen(k, 0);
    chosen[0] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
    std::vector<double> d2(n);
    for (int i = 0; i < n; ++i) d2[i] = sq_distance(row(i), row(chosen[0]), dim);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += d2[i];
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        } else {
            const double target = rng.next_double() * total;
            double acc = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[c] = pick;
        for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_distance(row(i), row(pick), dim));
    }
    for (int c = 0; c < k; ++c) {
        std::memcpy(&book.prototypes[static_cast<std::size_t>(c) * dim], row(chosen[c]),
                    sizeof(float) * dim);
    }

    constexpr int kMaxIters = 50;
    std::vector<int> assign(n, 0);
    std::vector<double> dist_to_center(n, 0.0);
    double prev_distortion = std::numeric_limits<double>::infinity();
    int iters = 0;
    for (; iters < kMaxIters; ++iters) {
        // Assignment step; ties to lowest prototype index.
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bi = 0;
            for (int c = 0; c < k; ++c) {
                const double d = sq_distance(row(i), book.prototype(c), dim);
                if (d < best) {
                    best = d;
                    bi = c;
                }
            }
            assign[i] = bi;
            dist_to_center[i] = best;
        }
        double distortion = 0.0;
        for (int i = 0; i < n; ++i) distortion += dist_to_center[i];
        distortion /= n;

        // Update step: per-cluster means accumulated in fixed sample order.
#pragma omp parallel for schedule(dynamic)
        for (int c = 0; c < k; ++c) {
            std::vector<double> mean(dim, 0.0);
            long long count = 0;
            for (int i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                const float* r = row(i);
                for (int d = 0; d < dim; ++d) mean[d] += r[d];
                ++count;
            }
            if (count > 0) {
                float* proto = &book.prototypes[static_cast<std::size_t>(c) * dim];
                for (int d = 0; d < dim; ++d) proto[d] = static_cast<float>(mean[d] / count);
            }
        }
        // Empty clusters re-seed to the farthest sample (lowest index on ties).
        std::vector<char> nonempty(k, 0);
        for (int i = 0; i < n; ++i) nonempty[assign[i]] = 1;
        for (int c = 0; c < k; ++c) {
            if (nonempty[c]) continue;
            int far_i = 0;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                if (dist_to_center[i] > far_d) {
                    far_d = dist_to_center[i];
                    far_i = i;
                }
            }
            std::memcpy(&book.prototypes[static_cast<std::size_t>(c) * dim], row(far_i),
                        sizeof(float) * dim);
            dist_to_center[far_i] = 0.0;
        }

        book.distortion = distortion;
        if (prev_distortion < std::numeric_limits<double>::infinity()) {
            const double denom = std::max(prev_distortion, 1e-300);
            if (std::abs(prev_distortion - distortion) / denom < 1e-6) {
                ++iters;
                break;
            }
        }
        prev_distortion = distortion;
    }
    book.iterations = iters;
    return book;
}

FeatureIndexMap quantize_descriptors(const DescriptorMap& desc, const Codebook& book) {
    if (desc.dim != book.dim) throw validation_error("quantize_descriptors: descriptor/prototype dimension mismatch");
    FeatureIndexMap map(desc.width, desc.height, {book.k});
    const int w = desc.width, h = desc.height;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float* d = desc.at(x, y);
            double best = std::numeric_limits<double>::infinity();
            int bi = 0;
            for (int c = 0; c < book.k; ++c) {
                const double dist = sq_distance(d, book.prototype(c), book.dim);
                if (dist < best) {
                    best = dist;
                    bi = c;
                }
            }
            map.at(x, y) = bi;
        }
    }
    return map;
}

FeatureIndexMap stack_feature_maps(const std::vector<FeatureIndexMap>& maps) {
    if (maps.empty()) throw validation_error("stack_feature_maps: no maps given");
    const int w = maps[0].width(), h = maps[0].height();
    std::vector<int> vocab;
    for (const auto& m : maps) {
        if (m.width() != w || m.height() != h) {
            throw validation_error("stack_feature_maps: size mismatch between maps");
        }
        for (int c = 0; c < m.channels(); ++c) vocab.push_back(m.vocab_sizes()[c]);
    }
    FeatureIndexMap out(w, h, vocab);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int ch = 0;
            for (const auto& m : maps) {
                for (int c = 0; c < m.channels(); ++c) out.at(x, y, ch++) = m.at(x, y, c);
            }
        }
    }
    return out;
}

std::vector<FeatureIndexMap> unstack_feature_maps(const FeatureIndexMap& map) {
    std::vector<FeatureIndexMap> out;
    for (int c = 0; c < map.channels(); ++c) {
        FeatureIndexMap m(map.width(), map.height(), {map.vocab_sizes()[c]});
        for (int y = 0; y < map.height(); ++y) {
            for (int x = 0; x < map.width(); ++x) m.at(x, y) = map.at(x, y, c);
        }
        out.push_back(std::move(m));
    }
    return out;
}

// --- file formats ------------------------------------------------------------

namespace {

void write_f32le_block(std::ofstream& out, const float* data, std::size_t n) {
    std::string buf;
    buf.reserve(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        buf.push_back(static_cast<char>(bits & 0xff));
        buf.push_back(static_cast<char>((bits >> 8) & 0xff));
        buf.push_back(static_cast<char>((bits >> 16) & 0xff));
        buf.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32le_block(std::ifstream& in, float* data, std::size_t n, const std::string& path) {
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw io_error("truncated payload in '" + path + "'");
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(raw[i * 4]) |
                             (static_cast<std::uint32_t>(raw[i * 4 + 1]) << 8) |
                             (static_cast<std::uint32_t>(raw[i * 4 + 2]) << 16) |
                             (static_cast<std::uint32_t>(raw[i * 4 + 3]) << 24);
        std::memcpy(&data[i], &bits, 4);
    }
}

} // namespace

void save_codebook(const Codebook& book, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_codebook: cannot open '" + path + "'");
    char header[96];
    std::snprintf(header, sizeof(header), "CBOOK 1 %d %d %llu\n", book.k, book.dim,
                  static_cast<unsigned long long>(book.seed));
    out << header;
    write_f32le_block(out, book.prototypes.data(), book.prototypes.size());
    if (!out) throw io_error("save_codebook: write failed for '" + path + "'");
}

Codebook load_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_codebook: cannot open '" + path + "'");
    std::string header;
    std::getline(in, header);
    int version = 0, k = 0, dim = 0;
    unsigned long long seed = 0;
    if (std::sscanf(header.c_str(), "CBOOK %d %d %d %llu", &version, &k, &dim, &seed) != 4 ||
        version != 1 || k < 1 || dim < 1) {
        throw io_error("load_codebook: malformed CBOOK header in '" + path + "'");
    }
    Codebook book;
    book.k = k;
    book.dim = dim;
    book.seed = seed;
    book.prototypes.resize(static_cast<std::size_t>(k) * dim);
    read_f32le_block(in, book.prototypes.data(), book.prototypes.size(), path);
    return book;
}

void save_feature_map(const FeatureIndexMap& map, const std::string& path) {
    Grid2D grid(map.width(), map.height(), map.channels());
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            for (int c = 0; c < map.channels(); ++c) {
                grid.at(x, y, c) = static_cast<float>(map.at(x, y, c));
            }
        }
    }
    save_cgrid(grid, path);
    nlohmann::ordered_json meta;
    meta["vocab_sizes"] = map.vocab_sizes();
    std::ofstream side(path + ".vocab.json", std::ios::trunc);
    if (!side) throw io_error("save_feature_map: cannot open '" + path + ".vocab.json'");
    side << meta.dump(2) << "\n";
}

FeatureIndexMap load_feature_map(const std::string& path) {
    Grid2D grid = load_cgrid(path);
    std::ifstream side(path + ".vocab.json");
    if (!side) throw io_error("load_feature_map: missing sidecar '" + path + ".vocab.json'");
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const std::exception& e) {
        throw io_error("load_feature_map: bad sidecar JSON: " + std::string(e.what()));
    }
    std::vector<int> vocab = meta.at("vocab_sizes").get<std::vector<int>>();
    if (static_cast<int>(vocab.size()) != grid.channels()) {
        throw io_error("load_feature_map: sidecar channel count does not match grid");
    }
    FeatureIndexMap map(grid.width(), grid.height(), vocab);
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            for (int c = 0; c < map.channels(); ++c) {
                map.at(x, y, c) = static_cast<std::int32_t>(std::lround(grid.at(x, y, c)));
            }
        }
    }
    map.validate();
    return map;
}

void save_descriptor_map(const DescriptorMap& desc, const std::string& path) {
    Grid2D grid(desc.width, desc.height, desc.dim, desc.data);
    save_cgrid(grid, path);
}

DescriptorMap load_descriptor_map(const std::string& path) {
    Grid2D grid = load_cgrid(path);
    DescriptorMap desc;
    desc.width = grid.width();
    desc.height = grid.height();
    desc.dim = grid.channels();
    desc.data = grid.data();
    return desc;
}

} // namespace crowdflow
