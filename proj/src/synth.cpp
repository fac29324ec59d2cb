#include "crowdflow/synth.hpp"

#include <algorithm>
#include <cmath>

#include "crowdflow/error.hpp"
#include "crowdflow/rng.hpp"

namespace crowdflow {

namespace {

constexpr double kBackgroundConf = -8.0;

std::vector<TextureComponent> random_texture(Rng& rng, int n_components, double max_wavelength) {
    // Log-uniform wavelengths so every pyramid level of a coarse-to-fine flow
    // solver sees usable gradients.
    std::vector<TextureComponent> comps(n_components);
    const double lo = std::log(8.0), hi = std::log(std::max(max_wavelength, 16.0));
    for (auto& c : comps) {
        const double wavelength = std::exp(rng.uniform(lo, hi));
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        c.amp = rng.uniform(0.5, 1.0);
        c.fx = std::cos(angle) / wavelength;
        c.fy = std::sin(angle) / wavelength;
        c.phase = rng.uniform(0.0, 2.0 * M_PI);
    }
    return comps;
}

double eval_texture(const std::vector<TextureComponent>& comps, double x, double y) {
    double s = 0.0, total_amp = 0.0;
    for (const auto& c : comps) {
        s += c.amp * std::sin(2.0 * M_PI * (c.fx * x + c.fy * y) + c.phase);
        total_amp += c.amp;
    }
    return total_amp > 0.0 ? 0.5 + 0.35 * s / total_amp : 0.5;
}

double person_brightness(const std::vector<std::pair<double, double>>& positions, double x,
                         double y) {
    double s = 0.0;
    constexpr double sigma = 3.0;
    for (const auto& [px, py] : positions) {
        const double dx = x - px;
        const double dy = y - py;
        const double d2 = dx * dx + dy * dy;
        if (d2 > 9.0 * sigma * sigma) continue;
        s += 0.15 * std::exp(-d2 / (2.0 * sigma * sigma));
    }
    return s;
}

Grid2D render_confidence(int width, int height, const std::vector<PersonProxy>& persons,
                         const std::vector<std::pair<double, double>>& positions,
                         double bump_sigma) {
    Grid2D conf(width, height, 1, static_cast<float>(kBackgroundConf));
    const double inv2s2 = 1.0 / (2.0 * bump_sigma * bump_sigma);
    const double radius = 4.0 * bump_sigma;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double v = kBackgroundConf;
            const double px = x + 0.5, py = y + 0.5;
            for (std::size_t i = 0; i < positions.size(); ++i) {
                const double dx = px - positions[i].first;
                const double dy = py - positions[i].second;
                if (std::abs(dx) > radius || std::abs(dy) > radius) continue;
                v += (persons[i].peak - kBackgroundConf) * std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
            conf.at(x, y) = static_cast<float>(v);
        }
    }
    return conf;
}

Grid2D render_image(int width, int height, const Scene& scene, const VelocitySpec& spec, int t,
                    const std::vector<std::pair<double, double>>& positions,
                    const std::vector<TextureComponent>& noise, double noise_phase_t) {
    Grid2D img(width, height, 1);
    const double cx = width / 2.0, cy = height / 2.0;
    const double half = height / 2.0;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double base;
            switch (spec.kind) {
            case VelocitySpec::Kind::Uniform:
                base = eval_texture(scene.texture_a, px - spec.vx * t, py - spec.vy * t);
                break;
            case VelocitySpec::Kind::OpposingStreams:
                base = py < half ? eval_texture(scene.texture_a, px - spec.vx * t, py)
                                 : eval_texture(scene.texture_b, px + spec.vx * t, py);
                break;
            case VelocitySpec::Kind::Rotation: {
                const double a = -spec.omega * t;
                const double rx = cx + std::cos(a) * (px - cx) - std::sin(a) * (py - cy);
                const double ry = cy + std::sin(a) * (px - cx) + std::cos(a) * (py - cy);
                base = eval_texture(scene.texture_a, rx, ry);
                break;
            }
            default:
                base = 0.5;
            }
            double v = base + person_brightness(positions, px, py);
            for (const auto& c : noise) {
                v += c.amp * std::sin(2.0 * M_PI * (c.fx * px + c.fy * py) + c.phase + noise_phase_t);
            }
            img.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

std::pair<double, double> advect(const VelocitySpec& spec, double x, double y, int t, int width,
                                 int height) {
    const double cx = width / 2.0, cy = height / 2.0;
    switch (spec.kind) {
    case VelocitySpec::Kind::Uniform:
        return {x + spec.vx * t, y + spec.vy * t};
    case VelocitySpec::Kind::OpposingStreams:
        return y < height / 2.0 ? std::pair{x + spec.vx * t, y} : std::pair{x - spec.vx * t, y};
    case VelocitySpec::Kind::Rotation: {
        const double a = spec.omega * t;
        return {cx + std::cos(a) * (x - cx) - std::sin(a) * (y - cy),
                cy + std::sin(a) * (x - cx) + std::cos(a) * (y - cy)};
    }
    }
    return {x, y};
}

} // namespace

Scene generate_scene(int n_persons, int width, int height, std::uint64_t seed) {
    if (n_persons < 0) throw validation_error("generate_scene: negative person count");
    if (width < 16 || height < 16) throw validation_error("generate_scene: frame too small");

    Scene scene;
    scene.width = width;
    scene.height = height;
    scene.seed = seed;

    Rng rng(seed);
    const double max_wavelength = std::min(width, height) / 2.0;
    scene.texture_a = random_texture(rng, 12, max_wavelength);
    scene.texture_b = random_texture(rng, 12, max_wavelength);

    const double margin = std::min({12.0, width / 4.0, height / 4.0});
    const double min_sep = 3.0;
    const int max_attempts = 200 * std::max(n_persons, 1);
    int attempts = 0;
    while (static_cast<int>(scene.persons.size()) < n_persons) {
        if (++attempts > max_attempts) {
            throw validation_error("generate_scene: cannot place persons without overlap (overcrowded)");
        }
        PersonProxy p;
        p.x = rng.uniform(margin, width - margin);
        p.y = rng.uniform(margin, height - margin);
        p.peak = rng.uniform(-0.6, -0.1);
        bool clash = false;
        for (const auto& q : scene.persons) {
            if (std::hypot(p.x - q.x, p.y - q.y) < min_sep) {
                clash = true;
                break;
            }
        }
        if (!clash) scene.persons.push_back(p);
    }

    std::vector<std::pair<double, double>> positions;
    positions.reserve(scene.persons.size());
    for (const auto& p : scene.persons) positions.emplace_back(p.x, p.y);

    scene.confidence = render_confidence(width, height, scene.persons, positions, scene.bump_sigma);
    scene.image = render_image(width, height, scene, VelocitySpec{}, 0, positions, {}, 0.0);
    scene.annotations.frame = 0;
    scene.annotations.points = positions;
    return scene;
}

Sequence generate_sequence(const Scene& scene, const VelocitySpec& spec, int n_frames,
                           std::uint64_t seed, double noise_amp) {
    if (n_frames < 1) throw validation_error("generate_sequence: need at least one frame");

    // Reject specs that push any person out of the frame.
    for (const auto& p : scene.persons) {
        for (int t = 0; t < n_frames; ++t) {
            const auto [x, y] = advect(spec, p.x, p.y, t, scene.width, scene.height);
            if (x < 0.0 || y < 0.0 || x > scene.width || y > scene.height) {
                throw validation_error("generate_sequence: a person exits the frame");
            }
        }
    }

    Sequence seq;
    seq.spec = spec;
    seq.width = scene.width;
    seq.height = scene.height;

    Rng rng(seed);
    std::vector<TextureComponent> noise;
    if (noise_amp > 0.0) {
        noise = random_texture(rng, 4, 24.0);
        for (auto& c : noise) c.amp = noise_amp * c.amp;
    }

    for (int t = 0; t < n_frames; ++t) {
        std::vector<std::pair<double, double>> positions;
        positions.reserve(scene.persons.size());
        for (const auto& p : scene.persons) {
            positions.push_back(advect(spec, p.x, p.y, t, scene.width, scene.height));
        }
        const double noise_phase = noise_amp > 0.0 ? rng.uniform(0.0, 2.0 * M_PI) : 0.0;
        seq.frames.push_back(
            render_image(scene.width, scene.height, scene, spec, t, positions, noise, noise_phase));
        seq.confidences.push_back(
            render_confidence(scene.width, scene.height, scene.persons, positions, scene.bump_sigma));
        AnnotationSet ann;
        ann.frame = t;
        ann.points = std::move(positions);
        seq.annotations.push_back(std::move(ann));
    }
    return seq;
}

FlowField Sequence::gt_displacement(int t, int gap) const {
    if (t < 0 || gap < 1 || t + gap >= static_cast<int>(frames.size())) {
        throw validation_error("gt_displacement: frame pair out of range");
    }
    FlowField out(width, height, 2);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            // Where is the content at pixel p of frame t located at frame t+gap?
            // The content seen at p originated at advect(p, -t); at t+gap it is
            // at advect(origin, t+gap).
            double ox, oy;
            switch (spec.kind) {
            case VelocitySpec::Kind::Uniform:
                ox = gap * spec.vx;
                oy = gap * spec.vy;
                break;
            case VelocitySpec::Kind::OpposingStreams:
                ox = py < height / 2.0 ? gap * spec.vx : -gap * spec.vx;
                oy = 0.0;
                break;
            case VelocitySpec::Kind::Rotation: {
                const double cx = width / 2.0, cy = height / 2.0;
                const double a = spec.omega * gap;
                ox = cx + std::cos(a) * (px - cx) - std::sin(a) * (py - cy) - px;
                oy = cy + std::sin(a) * (px - cx) + std::cos(a) * (py - cy) - py;
                break;
            }
            default:
                ox = oy = 0.0;
            }
            out.at(x, y, 0) = static_cast<float>(ox);
            out.at(x, y, 1) = static_cast<float>(oy);
        }
    }
    return out;
}

std::vector<TrainingInstance> generate_planted_training(int n_frames, int vocab_k,
                                                        const std::vector<double>& w_star,
                                                        int width, int height,
                                                        std::uint64_t seed) {
    if (n_frames < 1 || vocab_k < 1) throw validation_error("generate_planted_training: bad sizes");
    if (static_cast<int>(w_star.size()) != vocab_k) {
        throw validation_error("generate_planted_training: planted weights must have length K");
    }
    for (double w : w_star) {
        if (!(w >= 0.0)) throw validation_error("generate_planted_training: planted weights must be nonnegative");
    }

    Rng rng(seed);
    std::vector<TrainingInstance> out;
    std::vector<char> covered(vocab_k, 0);
    WeightVector wv;
    wv.weights = w_star;
    wv.vocab_sizes = {vocab_k};
    for (int f = 0; f < n_frames; ++f) {
        TrainingInstance inst;
        inst.frame = f;
        inst.features = FeatureIndexMap(width, height, {vocab_k});
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const int idx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab_k)));
                inst.features.at(x, y) = idx;
                covered[idx] = 1;
            }
        }
        inst.gt_density = estimate_density(inst.features, wv);
        out.push_back(std::move(inst));
    }
    for (int k = 0; k < vocab_k; ++k) {
        if (!covered[k]) {
            throw validation_error("generate_planted_training: index " + std::to_string(k) +
                                   " never appears in the training set");
        }
    }
    return out;
}

} // namespace crowdflow
