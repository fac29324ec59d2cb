// crowdflow command-line front end: file-based pipeline over the library
// stages (synthetic data, feature discretization, MESA training, density
// estimation, optical flow, geo-referencing, pressure analysis, evaluation,
// rendering). Every numeric result is also written as CSV or JSON.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "crowdflow/analytics.hpp"
#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/features.hpp"
#include "crowdflow/flow.hpp"
#include "crowdflow/georef.hpp"
#include "crowdflow/grid.hpp"
#include "crowdflow/learn.hpp"
#include "crowdflow/mesa.hpp"
#include "crowdflow/pressure.hpp"
#include "crowdflow/rng.hpp"
#include "crowdflow/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace crowdflow;

namespace {

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void write_json(const ordered_json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) throw io_error("write failed for '" + path + "'");
}

ordered_json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error("bad JSON in '" + path + "': " + e.what());
    }
    return j;
}

void write_counts_csv(const std::string& path, const std::vector<std::int64_t>& frames,
                      const std::vector<double>& counts) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << "frame,count\n";
    char line[80];
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(line, sizeof(line), "%lld,%.17g\n", static_cast<long long>(frames[i]),
                      counts[i]);
        out << line;
    }
}

std::pair<std::vector<std::int64_t>, std::vector<double>> read_counts_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame,count", 0) != 0) {
        throw io_error("expected 'frame,count' header in '" + path + "'");
    }
    std::vector<std::int64_t> frames;
    std::vector<double> counts;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        long long f;
        double c;
        if (std::sscanf(line.c_str(), "%lld,%lf", &f, &c) != 2) {
            throw io_error("malformed row in '" + path + "': " + line);
        }
        frames.push_back(f);
        counts.push_back(c);
    }
    return {frames, counts};
}

// Velocity grids exported as ESRI come in _c0/_c1 channel pairs.
VelocityField import_esri_velocity(const std::string& base) {
    const fs::path p(base);
    const std::string stem = (p.parent_path() / p.stem()).string();
    const std::string ext = p.extension().string();
    const WorldGrid e = import_esri_ascii(stem + "_c0" + ext);
    const WorldGrid n = import_esri_ascii(stem + "_c1" + ext);
    if (!e.same_frame(n)) throw io_error("velocity channel grids disagree: '" + base + "'");
    VelocityField v(e.origin_e, e.origin_n, e.cell_size, e.width, e.height, e.epsg, 2, 0.0f);
    v.nodata = e.nodata;
    for (int j = 0; j < v.height; ++j) {
        for (int i = 0; i < v.width; ++i) {
            v.at(i, j, 0) = e.at(i, j);
            v.at(i, j, 1) = n.at(i, j);
        }
    }
    return v;
}

WorldExportFormat parse_format(const std::string& f) {
    if (f == "esri") return WorldExportFormat::EsriAscii;
    if (f == "geojson") return WorldExportFormat::GeoJsonPoints;
    throw validation_error("unknown export format '" + f + "' (use esri or geojson)");
}

// ---------------------------------------------------------------- synth ----

struct SynthSceneOpts {
    int persons = 263;
    int width = 1440;
    int height = 1080;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::string prefix = "scene";
};

void run_synth_scene(const SynthSceneOpts& o) {
    const Scene scene = generate_scene(o.persons, o.width, o.height, o.seed);
    fs::create_directories(o.out_dir);
    const std::string conf = join(o.out_dir, o.prefix + "_conf.cgrid");
    const std::string image = join(o.out_dir, o.prefix + "_image.cgrid");
    const std::string ann = join(o.out_dir, o.prefix + "_ann.csv");
    save_cgrid(scene.confidence, conf);
    save_cgrid(scene.image, image);
    save_annotations({scene.annotations}, ann);

    ordered_json manifest;
    manifest["type"] = "crowdflow-manifest";
    manifest["version"] = 1;
    manifest["seed"] = o.seed;
    manifest["frames"] = ordered_json::array(
        {{{"frame", 0},
          {"confidence", o.prefix + "_conf.cgrid"},
          {"image", o.prefix + "_image.cgrid"},
          {"annotations", o.prefix + "_ann.csv"},
          {"gt_count", static_cast<double>(scene.annotations.count())}}});
    write_json(manifest, join(o.out_dir, o.prefix + "_manifest.json"));
    std::printf("scene: %d persons at %dx%d -> %s\n", o.persons, o.width, o.height,
                join(o.out_dir, o.prefix + "_manifest.json").c_str());
}

struct SynthSeqOpts {
    int persons = 40;
    int width = 256;
    int height = 256;
    std::uint64_t seed = 1;
    std::string kind = "uniform";
    double vx = 0.37;
    double vy = -0.22;
    double omega = 0.002;
    int frames = 11;
    int gap = 10;
    double noise = 0.0;
    std::string out_dir = ".";
    std::string prefix = "seq";
};

void run_synth_sequence(const SynthSeqOpts& o) {
    VelocitySpec spec;
    if (o.kind == "uniform") {
        spec.kind = VelocitySpec::Kind::Uniform;
    } else if (o.kind == "opposing") {
        spec.kind = VelocitySpec::Kind::OpposingStreams;
    } else if (o.kind == "rotation") {
        spec.kind = VelocitySpec::Kind::Rotation;
    } else {
        throw validation_error("unknown velocity spec '" + o.kind + "'");
    }
    spec.vx = o.vx;
    spec.vy = o.vy;
    spec.omega = o.omega;

    const Scene scene = generate_scene(o.persons, o.width, o.height, o.seed);
    const Sequence seq = generate_sequence(scene, spec, o.frames, o.seed + 1, o.noise);
    fs::create_directories(o.out_dir);

    ordered_json manifest;
    manifest["type"] = "crowdflow-manifest";
    manifest["version"] = 1;
    manifest["seed"] = o.seed;
    manifest["spec"] = {{"kind", o.kind}, {"vx", o.vx}, {"vy", o.vy}, {"omega", o.omega},
                        {"frames", o.frames}, {"gap", o.gap}, {"noise", o.noise}};
    ordered_json frames = ordered_json::array();
    char name[128];
    for (int t = 0; t < o.frames; ++t) {
        std::snprintf(name, sizeof(name), "%s_img_%04d.cgrid", o.prefix.c_str(), t);
        save_cgrid(seq.frames[t], join(o.out_dir, name));
        ordered_json fr;
        fr["frame"] = t;
        fr["image"] = name;
        std::snprintf(name, sizeof(name), "%s_conf_%04d.cgrid", o.prefix.c_str(), t);
        save_cgrid(seq.confidences[t], join(o.out_dir, name));
        fr["confidence"] = name;
        fr["gt_count"] = static_cast<double>(seq.annotations[t].count());
        frames.push_back(std::move(fr));
    }
    save_annotations(seq.annotations, join(o.out_dir, o.prefix + "_ann.csv"));
    manifest["annotations"] = o.prefix + "_ann.csv";
    // Exact displacement fields for every (t, t+gap) pair.
    ordered_json gts = ordered_json::array();
    for (int t = 0; t + o.gap < o.frames; ++t) {
        std::snprintf(name, sizeof(name), "%s_gtflow_%04d_%04d.cgrid", o.prefix.c_str(), t,
                      t + o.gap);
        save_cgrid(seq.gt_displacement(t, o.gap), join(o.out_dir, name));
        gts.push_back({{"t", t}, {"gap", o.gap}, {"path", name}});
    }
    manifest["frames"] = std::move(frames);
    manifest["gt_displacements"] = std::move(gts);
    write_json(manifest, join(o.out_dir, o.prefix + "_manifest.json"));
    std::printf("sequence: %d frames (%s) -> %s\n", o.frames, o.kind.c_str(),
                join(o.out_dir, o.prefix + "_manifest.json").c_str());
}

struct SynthPlantedOpts {
    int frames = 6;
    int vocab = 32;
    int width = 128;
    int height = 128;
    std::uint64_t seed = 1;
    double wstar_scale = 0.02;
    std::string out_dir = ".";
    std::string prefix = "planted";
};

void run_synth_planted(const SynthPlantedOpts& o) {
    Rng rng(o.seed);
    std::vector<double> wstar(o.vocab);
    for (double& w : wstar) w = rng.uniform(0.0, o.wstar_scale);
    const auto train =
        generate_planted_training(o.frames, o.vocab, wstar, o.width, o.height, o.seed + 1);
    fs::create_directories(o.out_dir);

    ordered_json manifest;
    manifest["type"] = "crowdflow-manifest";
    manifest["version"] = 1;
    manifest["seed"] = o.seed;
    ordered_json frames = ordered_json::array();
    char name[128];
    std::vector<std::int64_t> ids;
    std::vector<double> counts;
    for (int f = 0; f < o.frames; ++f) {
        ordered_json fr;
        fr["frame"] = f;
        std::snprintf(name, sizeof(name), "%s_feat_%03d.cgrid", o.prefix.c_str(), f);
        save_feature_map(train[f].features, join(o.out_dir, name));
        fr["features"] = name;
        std::snprintf(name, sizeof(name), "%s_gt_%03d.cgrid", o.prefix.c_str(), f);
        save_cgrid(train[f].gt_density, join(o.out_dir, name));
        fr["gt_density"] = name;
        const double c = count_total(train[f].gt_density);
        fr["gt_count"] = c;
        ids.push_back(f);
        counts.push_back(c);
        frames.push_back(std::move(fr));
    }
    manifest["frames"] = std::move(frames);
    Model truth;
    truth.w.weights = wstar;
    truth.w.vocab_sizes = {o.vocab};
    save_model(truth, join(o.out_dir, o.prefix + "_wstar.cmodel"));
    manifest["planted_model"] = o.prefix + "_wstar.cmodel";
    write_json(manifest, join(o.out_dir, o.prefix + "_manifest.json"));
    write_counts_csv(join(o.out_dir, o.prefix + "_gt_counts.csv"), ids, counts);
    std::printf("planted: %d frames, K=%d -> %s\n", o.frames, o.vocab,
                join(o.out_dir, o.prefix + "_manifest.json").c_str());
}

// ---------------------------------------------------------------- learn ----

struct LearnOpts {
    std::string manifest;
    std::string out = "model.cmodel";
    std::string diag_out;
    std::string reg = "l1";
    double lambda_fit = 100.0;
    double lambda1 = 0.1;
    double eps_cut = 0.1;
    int max_outer = 100;
    double sigma_gt = 8.0;
    int inner_iters = 12000;
};

std::vector<TrainingInstance> load_training(const std::string& manifest_path, double sigma_gt) {
    const ordered_json manifest = read_json(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    if (!manifest.contains("frames")) throw io_error("manifest has no 'frames' list");
    std::vector<TrainingInstance> train;
    for (const auto& fr : manifest["frames"]) {
        TrainingInstance inst;
        inst.frame = fr.value("frame", static_cast<std::int64_t>(train.size()));
        if (!fr.contains("features")) {
            throw validation_error("manifest frame lacks 'features' (run the features stage first)");
        }
        inst.features = load_feature_map((base / fr["features"].get<std::string>()).string());
        if (fr.contains("gt_density")) {
            inst.gt_density = load_cgrid((base / fr["gt_density"].get<std::string>()).string());
        } else if (fr.contains("annotations")) {
            const auto sets =
                load_annotations((base / fr["annotations"].get<std::string>()).string());
            const auto it = std::find_if(sets.begin(), sets.end(), [&](const AnnotationSet& s) {
                return s.frame == inst.frame;
            });
            AnnotationSet ann;
            ann.frame = inst.frame;
            if (it != sets.end()) ann = *it;
            inst.gt_density =
                rasterize_ground_truth(ann, sigma_gt, inst.features.width(), inst.features.height());
        } else {
            throw validation_error("manifest frame needs 'gt_density' or 'annotations'");
        }
        train.push_back(std::move(inst));
    }
    if (train.empty()) throw validation_error("manifest lists no frames");
    return train;
}

void run_learn(const LearnOpts& o) {
    LearnParams params;
    if (o.reg == "l1") {
        params.reg = Regularizer::L1;
    } else if (o.reg == "tik") {
        params.reg = Regularizer::Tikhonov;
    } else {
        throw validation_error("unknown regularizer '" + o.reg + "' (use l1 or tik)");
    }
    params.lambda_fit = o.lambda_fit;
    params.lambda1 = o.lambda1;
    params.eps_cut = o.eps_cut;
    params.max_outer = o.max_outer;
    params.inner_max_iters = o.inner_iters;

    const auto train = load_training(o.manifest, o.sigma_gt);
    auto [model, diag] = learn_weights(train, params);
    save_model(model, o.out);

    ordered_json dj;
    dj["converged"] = diag.converged;
    dj["outer_iterations"] = diag.outer_iterations;
    dj["final_max_violation"] = diag.final_max_violation;
    dj["objective"] = diag.outer_objective;
    dj["raw_objective"] = diag.raw_objective;
    dj["inner_objective"] = diag.inner_objective;
    dj["constraints"] = diag.constraint_count;
    dj["max_violation"] = diag.max_violation;
    int nonzero = 0;
    for (double w : model.w.weights) {
        if (w > 0.0) ++nonzero;
    }
    dj["nonzero_weights"] = nonzero;
    if (!o.diag_out.empty()) write_json(dj, o.diag_out);
    std::printf("learned %zu weights (%d nonzero) in %d outer iterations%s -> %s\n",
                model.w.weights.size(), nonzero, diag.outer_iterations,
                diag.converged ? "" : " [did not converge]", o.out.c_str());
    if (!diag.converged) {
        std::fprintf(stderr,
                     "warning: cutting-plane loop hit max-outer with violation %.3g persons\n",
                     diag.final_max_violation);
    }
}

// -------------------------------------------------------------- estimate ----

struct EstimateOpts {
    std::string model;
    std::vector<std::string> features;
    std::string counts_out;
    std::string density_dir;
};

void run_estimate(const EstimateOpts& o) {
    const Model model = load_model(o.model);
    if (o.features.empty()) throw validation_error("estimate: no feature maps given");
    std::vector<std::int64_t> frames;
    std::vector<double> counts;
    for (std::size_t i = 0; i < o.features.size(); ++i) {
        const FeatureIndexMap feat = load_feature_map(o.features[i]);
        require_layout_match(model, feat);
        const Grid2D density = estimate_density(feat, model.w);
        const double count = count_total(density);
        frames.push_back(static_cast<std::int64_t>(i));
        counts.push_back(count);
        if (!o.density_dir.empty()) {
            fs::create_directories(o.density_dir);
            char name[64];
            std::snprintf(name, sizeof(name), "density_%04zu.cgrid", i);
            save_cgrid(density, join(o.density_dir, name));
        }
        std::printf("%s: count %.3f\n", o.features[i].c_str(), count);
    }
    if (!o.counts_out.empty()) write_counts_csv(o.counts_out, frames, counts);
}

// ------------------------------------------------------------------ flow ----

struct FlowOpts {
    std::vector<std::string> frames;
    int gap = 10;
    int avg_window = 5;
    std::string out_dir = ".";
    std::string prefix = "flow";
    FlowParams params;
};

void run_flow(const FlowOpts& o) {
    if (static_cast<int>(o.frames.size()) <= o.gap) {
        throw validation_error("flow: need more frames than the gap");
    }
    FlowParams params = o.params;
    params.frame_gap = o.gap;
    params.avg_window = o.avg_window;
    params.validate();
    fs::create_directories(o.out_dir);

    std::vector<Grid2D> images;
    for (const auto& p : o.frames) images.push_back(to_grayscale(load_cgrid(p)));

    ordered_json listing;
    listing["gap"] = o.gap;
    listing["avg_window"] = o.avg_window;
    ordered_json flows_json = ordered_json::array();
    std::vector<FlowField> flows;
    char name[128];
    for (int t = 0; t + o.gap < static_cast<int>(images.size()); ++t) {
        flows.push_back(tvl1_flow(images[t], images[t + o.gap], params));
        std::snprintf(name, sizeof(name), "%s_%04d_%04d.cgrid", o.prefix.c_str(), t, t + o.gap);
        save_cgrid(flows.back(), join(o.out_dir, name));
        flows_json.push_back({{"t", t}, {"path", name}});
    }
    ordered_json avgs_json = ordered_json::array();
    for (int t = 0; t + o.avg_window <= static_cast<int>(flows.size()); ++t) {
        const std::vector<FlowField> window(flows.begin() + t, flows.begin() + t + o.avg_window);
        std::snprintf(name, sizeof(name), "%s_avg_%04d.cgrid", o.prefix.c_str(), t);
        save_cgrid(average_flows(window), join(o.out_dir, name));
        avgs_json.push_back({{"t", t}, {"path", name}});
    }
    const std::size_t n_avgs = avgs_json.size();
    listing["flows"] = std::move(flows_json);
    listing["averages"] = std::move(avgs_json);
    write_json(listing, join(o.out_dir, o.prefix + "_manifest.json"));
    std::printf("flow: %zu pairs, %zu windowed averages -> %s\n", flows.size(), n_avgs,
                join(o.out_dir, o.prefix + "_manifest.json").c_str());
}

// ---------------------------------------------------------------- georef ----

struct GeorefGridOpts {
    double cell_size = 0.25;
    int epsg = 32633;
    double origin_e = 0.0;
    double origin_n = 0.0;
    int ncols = 0;
    int nrows = 0;
    bool explicit_grid = false;
};

WorldGrid make_grid_spec(const GeorefGridOpts& g, const PixelMapping& mapping, int width,
                         int height, int channels) {
    if (g.explicit_grid) {
        return WorldGrid(g.origin_e, g.origin_n, g.cell_size, g.ncols, g.nrows, g.epsg, channels);
    }
    return fit_world_grid(mapping, width, height, g.cell_size, g.epsg, channels);
}

struct GeorefFitOpts {
    std::string pairs;
    std::string out = "site.homog";
};

// Pairs file: CSV header `u,v,e,n`, one pixel<->world correspondence per row.
void run_georef_fit(const GeorefFitOpts& o) {
    std::ifstream in(o.pairs);
    if (!in) throw io_error("georef fit: cannot open '" + o.pairs + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("u,v,e,n", 0) != 0) {
        throw io_error("georef fit: expected 'u,v,e,n' header in '" + o.pairs + "'");
    }
    std::vector<std::pair<std::pair<double, double>, std::pair<double, double>>> pairs;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        double u, v, e, n;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &u, &v, &e, &n) != 4) {
            throw io_error("georef fit: malformed row '" + line + "'");
        }
        pairs.push_back({{u, v}, {e, n}});
    }
    const Homography h = fit_homography(pairs);
    save_mapping(h, o.out);
    std::printf("georef fit: %zu correspondences, RMS residual %.6g m -> %s\n", pairs.size(),
                h.rms_residual, o.out.c_str());
}

struct GeorefDensityOpts {
    std::string in;
    std::string mapping;
    std::string out = "density.asc";
    std::string format = "esri";
    std::string stats_out;
    double sigma_w = 2.0;
    GeorefGridOpts grid;
};

void run_georef_density(const GeorefDensityOpts& o) {
    const Grid2D density = load_cgrid(o.in);
    const PixelMapping mapping = load_mapping(o.mapping);
    const WorldGrid spec =
        make_grid_spec(o.grid, mapping, density.width(), density.height(), 1);
    RectifyStats stats;
    const WorldGrid world = rectify_density(density, mapping, spec, o.sigma_w, &stats);
    export_world_grid(world, o.out, parse_format(o.format));
    ordered_json sj;
    sj["image_sum"] = count_total(density);
    sj["world_sum"] = stats.in_mass;
    sj["out_of_grid_mass"] = stats.out_of_grid_mass;
    sj["skipped_pixels"] = stats.skipped_pixels;
    sj["cell_size"] = spec.cell_size;
    sj["epsg"] = spec.epsg;
    if (!o.stats_out.empty()) write_json(sj, o.stats_out);
    std::printf("georef density: %.3f in-grid of %.3f total mass -> %s\n", stats.in_mass,
                count_total(density), o.out.c_str());
}

struct GeorefMotionOpts {
    std::string flow;
    std::string mapping;
    std::string mapping_gap;
    std::string out = "velocity.asc";
    std::string format = "esri";
    std::string stats_out;
    double fps = 25.0;
    int gap = 10;
    double dt = 0.0; // overrides fps/gap when > 0
    GeorefGridOpts grid;
};

void run_georef_motion(const GeorefMotionOpts& o) {
    const FlowField flow = load_cgrid(o.flow);
    const PixelMapping mapping_t = load_mapping(o.mapping);
    const PixelMapping mapping_gap =
        o.mapping_gap.empty() ? mapping_t : load_mapping(o.mapping_gap);
    const double dt = o.dt > 0.0 ? o.dt : static_cast<double>(o.gap) / o.fps;
    const WorldGrid spec = make_grid_spec(o.grid, mapping_t, flow.width(), flow.height(), 2);
    RectifyStats stats;
    const VelocityField vel = rectify_motion(flow, mapping_t, mapping_gap, dt, spec, &stats);
    export_world_grid(vel, o.out, parse_format(o.format));
    ordered_json sj;
    sj["dt"] = dt;
    sj["skipped_pixels"] = stats.skipped_pixels;
    sj["cell_size"] = spec.cell_size;
    sj["epsg"] = spec.epsg;
    if (!o.stats_out.empty()) write_json(sj, o.stats_out);
    std::printf("georef motion: dt=%.3fs -> %s\n", dt, o.out.c_str());
}

// -------------------------------------------------------------- pressure ----

struct PressureOpts {
    std::string density; // ESRI path from georef density (cell mass)
    std::vector<std::string> velocities;
    double radius_m = 1.0;
    int t_window = 5;
    std::string out_prefix = "pressure";
    std::string format = "esri";
    std::string max_out = "pressure_max.csv";
};

void run_pressure(const PressureOpts& o) {
    const WorldGrid mass = import_esri_ascii(o.density);
    const WorldGrid density = density_to_per_m2(mass);
    if (o.velocities.empty()) throw validation_error("pressure: no velocity grids given");
    std::vector<VelocityField> fields;
    for (const auto& v : o.velocities) fields.push_back(import_esri_velocity(v));
    for (const auto& f : fields) {
        if (!f.same_frame(mass)) {
            throw validation_error("pressure: velocity grid frame differs from density grid");
        }
    }
    const int window = std::min<int>(o.t_window, static_cast<int>(fields.size()));

    std::ofstream maxcsv(o.max_out, std::ios::binary | std::ios::trunc);
    if (!maxcsv) throw io_error("cannot open '" + o.max_out + "'");
    maxcsv << "window_start,max_pressure,cell_i,cell_j,easting,northing\n";
    char line[192], name[128];
    for (int t = 0; t + window <= static_cast<int>(fields.size()); ++t) {
        const std::vector<VelocityField> slice(fields.begin() + t, fields.begin() + t + window);
        const WorldGrid var = velocity_variance(slice, o.radius_m);
        const WorldGrid pressure = pressure_map(density, var);
        std::snprintf(name, sizeof(name), "%s_%04d.asc", o.out_prefix.c_str(), t);
        export_world_grid(pressure, name, parse_format(o.format));
        double best = -1.0;
        int bi = 0, bj = 0;
        for (int j = 0; j < pressure.height; ++j) {
            for (int i = 0; i < pressure.width; ++i) {
                if (pressure.is_nodata(i, j)) continue;
                if (pressure.at(i, j) > best) {
                    best = pressure.at(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        std::snprintf(line, sizeof(line), "%d,%.17g,%d,%d,%.17g,%.17g\n", t, best, bi, bj,
                      pressure.cell_center_e(bi), pressure.cell_center_n(bj));
        maxcsv << line;
    }
    std::printf("pressure: %d window(s), radius %.2fm -> %s\n",
                std::max(0, static_cast<int>(fields.size()) - window + 1), o.radius_m,
                o.max_out.c_str());
}

// ------------------------------------------------------------------ eval ----

struct EvalOpts {
    std::string est;
    std::string gt;
    std::string gt_annotations;
    std::string out = "report.csv";
};

void run_eval(const EvalOpts& o) {
    const auto [est_frames, est_counts] = read_counts_csv(o.est);
    std::vector<std::int64_t> gt_frames;
    std::vector<double> gt_counts;
    if (!o.gt.empty()) {
        std::tie(gt_frames, gt_counts) = read_counts_csv(o.gt);
    } else if (!o.gt_annotations.empty()) {
        for (const auto& set : load_annotations(o.gt_annotations)) {
            gt_frames.push_back(set.frame);
            gt_counts.push_back(static_cast<double>(set.count()));
        }
    } else {
        throw validation_error("eval: provide --gt counts CSV or --gt-annotations");
    }
    if (gt_counts.size() != est_counts.size()) {
        throw validation_error("eval: estimated and ground-truth lists differ in length");
    }
    write_count_report(o.out, est_frames, gt_counts, est_counts);
    const CountErrors errs = count_errors(est_counts, gt_counts);
    std::printf("eval: mae %.3f persons, mean %.2f%% over %zu frames", errs.mae, errs.mean_pct,
                est_counts.size());
    if (est_counts.size() >= 2) std::printf(", smoothness %.3f", temporal_smoothness(est_counts));
    std::printf(" -> %s\n", o.out.c_str());
}

// ---------------------------------------------------------------- render ----

struct RenderOpts {
    std::string in;
    std::string out = "out.pgm";
    std::string format = "p5";
    int channel = 0;
};

void run_render(const RenderOpts& o) {
    Grid2D grid;
    float nodata = -9999.0f;
    std::ifstream probe(o.in, std::ios::binary);
    if (!probe) throw io_error("cannot open '" + o.in + "'");
    std::string magic(5, '\0');
    probe.read(magic.data(), 5);
    probe.close();
    if (magic == "CGRID") {
        grid = load_cgrid(o.in);
    } else {
        const WorldGrid wg = import_esri_ascii(o.in);
        nodata = wg.nodata;
        grid = Grid2D(wg.width, wg.height, wg.channels);
        for (int j = 0; j < wg.height; ++j) {
            for (int i = 0; i < wg.width; ++i) {
                // north-up rendering: world row 0 is the southernmost
                for (int c = 0; c < wg.channels; ++c) {
                    grid.at(i, wg.height - 1 - j, c) = wg.at(i, j, c);
                }
            }
        }
    }
    save_pgm(grid, o.out, o.format != "p2", o.channel, nodata);
    std::printf("render: %s -> %s\n", o.in.c_str(), o.out.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"crowdflow: density, count, motion, geo-referencing and pressure analysis "
                 "for crowd video"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = runtime default)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate deterministic synthetic inputs");
    synth->require_subcommand(1);
    SynthSceneOpts sc;
    auto* synth_scene = synth->add_subcommand("scene", "one annotated scene");
    synth_scene->add_option("--persons", sc.persons, "person count")->capture_default_str();
    synth_scene->add_option("--width", sc.width, "frame width, px")->capture_default_str();
    synth_scene->add_option("--height", sc.height, "frame height, px")->capture_default_str();
    synth_scene->add_option("--seed", sc.seed, "generator seed")->capture_default_str();
    synth_scene->add_option("--out-dir", sc.out_dir, "output directory")->capture_default_str();
    synth_scene->add_option("--prefix", sc.prefix, "output name prefix")->capture_default_str();

    SynthSeqOpts sq;
    auto* synth_seq = synth->add_subcommand("sequence", "an advected frame sequence");
    synth_seq->add_option("--persons", sq.persons)->capture_default_str();
    synth_seq->add_option("--width", sq.width)->capture_default_str();
    synth_seq->add_option("--height", sq.height)->capture_default_str();
    synth_seq->add_option("--seed", sq.seed)->capture_default_str();
    synth_seq->add_option("--spec", sq.kind, "uniform | opposing | rotation")->capture_default_str();
    synth_seq->add_option("--vx", sq.vx, "px/frame")->capture_default_str();
    synth_seq->add_option("--vy", sq.vy, "px/frame")->capture_default_str();
    synth_seq->add_option("--omega", sq.omega, "rad/frame (rotation)")->capture_default_str();
    synth_seq->add_option("--frames", sq.frames)->capture_default_str();
    synth_seq->add_option("--gap", sq.gap, "gap for emitted displacement fields")
        ->capture_default_str();
    synth_seq->add_option("--noise", sq.noise, "per-frame texture perturbation amplitude")
        ->capture_default_str();
    synth_seq->add_option("--out-dir", sq.out_dir)->capture_default_str();
    synth_seq->add_option("--prefix", sq.prefix)->capture_default_str();

    SynthPlantedOpts sp;
    auto* synth_planted =
        synth->add_subcommand("planted", "feature maps with exactly linear ground truth");
    synth_planted->add_option("--frames", sp.frames)->capture_default_str();
    synth_planted->add_option("--k", sp.vocab, "vocabulary size")->capture_default_str();
    synth_planted->add_option("--width", sp.width)->capture_default_str();
    synth_planted->add_option("--height", sp.height)->capture_default_str();
    synth_planted->add_option("--seed", sp.seed)->capture_default_str();
    synth_planted->add_option("--wstar-scale", sp.wstar_scale, "planted weights ~ U[0, scale]")
        ->capture_default_str();
    synth_planted->add_option("--out-dir", sp.out_dir)->capture_default_str();
    synth_planted->add_option("--prefix", sp.prefix)->capture_default_str();

    // features
    auto* features = app.add_subcommand("features", "discretize measurements into index maps");
    features->require_subcommand(1);
    std::string f_in, f_out, f_book_path;
    double qc_min = -4.0, qc_max = -0.6;
    int qc_bins = 256;
    auto* f_qc = features->add_subcommand("quantize-conf", "bin detector confidences");
    f_qc->add_option("--in", f_in, "confidence CGRID")->required();
    f_qc->add_option("--out", f_out, "index map CGRID")->required();
    f_qc->add_option("--min-conf", qc_min, "clamp floor")->capture_default_str();
    f_qc->add_option("--max-conf", qc_max, "clamp ceiling")->capture_default_str();
    f_qc->add_option("--bins", qc_bins, "vocabulary size")->capture_default_str();

    int d_patch = 16;
    auto* f_desc = features->add_subcommand("descriptors", "dense gradient-orientation descriptors");
    f_desc->add_option("--in", f_in, "image CGRID")->required();
    f_desc->add_option("--out", f_out, "descriptor CGRID (128 channels)")->required();
    f_desc->add_option("--patch", d_patch, "patch size, multiple of 4")->capture_default_str();

    int cb_k = 256, cb_stride = 4;
    std::uint64_t cb_seed = 1;
    auto* f_book = features->add_subcommand("codebook", "k-means prototypes from descriptors");
    f_book->add_option("--in", f_in, "descriptor CGRID")->required();
    f_book->add_option("--out", f_out, "codebook file")->required();
    f_book->add_option("--k", cb_k, "prototype count")->capture_default_str();
    f_book->add_option("--stride", cb_stride, "sample every Nth pixel")->capture_default_str();
    f_book->add_option("--seed", cb_seed)->capture_default_str();

    auto* f_qd = features->add_subcommand("quantize-desc", "nearest-prototype indices");
    f_qd->add_option("--in", f_in, "descriptor CGRID")->required();
    f_qd->add_option("--book", f_book_path, "codebook file")->required();
    f_qd->add_option("--out", f_out, "index map CGRID")->required();

    std::vector<std::string> stack_in;
    auto* f_stack = features->add_subcommand("stack", "concatenate feature vocabularies");
    f_stack->add_option("--in", stack_in, "index maps, repeatable")->required();
    f_stack->add_option("--out", f_out, "stacked index map")->required();

    // learn
    LearnOpts lo;
    auto* learn = app.add_subcommand("learn", "train the weight vector (cutting-plane MESA fit)");
    learn->add_option("--manifest", lo.manifest, "training manifest JSON")->required();
    learn->add_option("--out", lo.out, "model file")->capture_default_str();
    learn->add_option("--diag-out", lo.diag_out, "training diagnostics JSON");
    learn->add_option("--reg", lo.reg, "l1 | tik")->capture_default_str();
    learn->add_option("--lambda-fit", lo.lambda_fit, "fit term weight")->capture_default_str();
    learn->add_option("--lambda1", lo.lambda1, "L1 strength")->capture_default_str();
    learn->add_option("--eps-cut", lo.eps_cut, "cut tolerance, persons")->capture_default_str();
    learn->add_option("--max-outer", lo.max_outer, "outer iteration cap")->capture_default_str();
    learn->add_option("--sigma-gt", lo.sigma_gt, "ground-truth kernel sigma, px")
        ->capture_default_str();
    learn->add_option("--inner-iters", lo.inner_iters, "inner solver iteration cap")
        ->capture_default_str();

    // estimate
    EstimateOpts eo;
    auto* estimate = app.add_subcommand("estimate", "densities and counts from a model");
    estimate->add_option("--model", eo.model, "model file")->required();
    estimate->add_option("features", eo.features, "feature index maps")->required();
    estimate->add_option("--counts-out", eo.counts_out, "counts CSV");
    estimate->add_option("--density-out-dir", eo.density_dir, "write density CGRIDs here");

    // flow
    FlowOpts fo;
    auto* flow = app.add_subcommand("flow", "TV-L1 optical flow over a frame list");
    flow->add_option("frames", fo.frames, "ordered frame CGRIDs")->required();
    flow->add_option("--gap", fo.gap, "frame gap of each pair")->capture_default_str();
    flow->add_option("--avg-window", fo.avg_window, "temporal averaging window")
        ->capture_default_str();
    flow->add_option("--out-dir", fo.out_dir)->capture_default_str();
    flow->add_option("--prefix", fo.prefix)->capture_default_str();
    flow->add_option("--lambda", fo.params.lambda, "data term weight")->capture_default_str();
    flow->add_option("--theta", fo.params.theta, "relaxation")->capture_default_str();
    flow->add_option("--tau", fo.params.tau, "dual step (<= 0.25)")->capture_default_str();
    flow->add_option("--warps", fo.params.warps)->capture_default_str();
    flow->add_option("--inner", fo.params.inner_iters, "inner iterations per warp")
        ->capture_default_str();
    flow->add_option("--scale", fo.params.pyramid_scale, "pyramid scale")->capture_default_str();
    flow->add_option("--min-level", fo.params.min_level_size, "coarsest level size")
        ->capture_default_str();

    // georef
    auto* georef = app.add_subcommand("georef", "rectify density or motion into world coordinates");
    georef->require_subcommand(1);
    GeorefFitOpts gf;
    auto* georef_fit =
        georef->add_subcommand("fit", "fit a homography from pixel<->world correspondences");
    georef_fit->add_option("--pairs", gf.pairs, "CSV with header u,v,e,n")->required();
    georef_fit->add_option("--out", gf.out, "mapping file")->capture_default_str();

    GeorefDensityOpts gd;
    auto* georef_density = georef->add_subcommand("density", "splat + smooth density into a grid");
    georef_density->add_option("--in", gd.in, "density CGRID")->required();
    georef_density->add_option("--mapping", gd.mapping, "HOMOG/POSE mapping file")->required();
    georef_density->add_option("--out", gd.out)->capture_default_str();
    georef_density->add_option("--format", gd.format, "esri | geojson")->capture_default_str();
    georef_density->add_option("--stats-out", gd.stats_out, "conservation stats JSON");
    georef_density->add_option("--sigma-w", gd.sigma_w, "smoothing sigma, cells")
        ->capture_default_str();
    georef_density->add_option("--cell-size", gd.grid.cell_size, "meters")->capture_default_str();
    georef_density->add_option("--epsg", gd.grid.epsg)->capture_default_str();
    auto* gd_oe = georef_density->add_option("--origin-e", gd.grid.origin_e, "grid origin easting");
    georef_density->add_option("--origin-n", gd.grid.origin_n, "grid origin northing");
    georef_density->add_option("--ncols", gd.grid.ncols);
    georef_density->add_option("--nrows", gd.grid.nrows);

    GeorefMotionOpts gm;
    auto* georef_motion = georef->add_subcommand("motion", "flow to metric velocities");
    georef_motion->add_option("--flow", gm.flow, "flow CGRID (2 channels)")->required();
    georef_motion->add_option("--mapping", gm.mapping, "mapping at time t")->required();
    georef_motion->add_option("--mapping-gap", gm.mapping_gap,
                              "mapping at t+gap (default: same as --mapping)");
    georef_motion->add_option("--out", gm.out)->capture_default_str();
    georef_motion->add_option("--format", gm.format, "esri | geojson")->capture_default_str();
    georef_motion->add_option("--stats-out", gm.stats_out);
    georef_motion->add_option("--fps", gm.fps, "frame rate")->capture_default_str();
    georef_motion->add_option("--gap", gm.gap, "frame gap of the flow")->capture_default_str();
    georef_motion->add_option("--dt", gm.dt, "seconds; overrides fps/gap when set");
    georef_motion->add_option("--cell-size", gm.grid.cell_size)->capture_default_str();
    georef_motion->add_option("--epsg", gm.grid.epsg)->capture_default_str();
    auto* gm_oe = georef_motion->add_option("--origin-e", gm.grid.origin_e);
    georef_motion->add_option("--origin-n", gm.grid.origin_n);
    georef_motion->add_option("--ncols", gm.grid.ncols);
    georef_motion->add_option("--nrows", gm.grid.nrows);

    // pressure
    PressureOpts po;
    auto* pressure = app.add_subcommand("pressure", "P = density x Var(velocity)");
    pressure->add_option("--density", po.density, "rectified density (ESRI)")->required();
    pressure->add_option("--velocity", po.velocities, "velocity grids (ESRI _c0/_c1 pairs)")
        ->required();
    pressure->add_option("--radius-m", po.radius_m, "spatial window radius, m")
        ->capture_default_str();
    pressure->add_option("--t-window", po.t_window, "velocity fields per window")
        ->capture_default_str();
    pressure->add_option("--out-prefix", po.out_prefix)->capture_default_str();
    pressure->add_option("--format", po.format, "esri | geojson")->capture_default_str();
    pressure->add_option("--max-out", po.max_out, "per-window max-P CSV")->capture_default_str();

    // eval
    EvalOpts vo;
    auto* eval = app.add_subcommand("eval", "count error and smoothness report");
    eval->add_option("--est", vo.est, "estimated counts CSV")->required();
    eval->add_option("--gt", vo.gt, "ground-truth counts CSV");
    eval->add_option("--gt-annotations", vo.gt_annotations, "derive gt counts from annotations");
    eval->add_option("--out", vo.out, "report CSV")->capture_default_str();

    // render
    RenderOpts ro;
    auto* render = app.add_subcommand("render", "grid to 8-bit PGM heatmap");
    render->add_option("--in", ro.in, "CGRID or ESRI ASCII")->required();
    render->add_option("--out", ro.out)->capture_default_str();
    render->add_option("--format", ro.format, "p5 | p2")->capture_default_str();
    render->add_option("--channel", ro.channel)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (synth_scene->parsed()) run_synth_scene(sc);
        if (synth_seq->parsed()) run_synth_sequence(sq);
        if (synth_planted->parsed()) run_synth_planted(sp);
        if (f_qc->parsed()) {
            save_feature_map(quantize_confidences(load_cgrid(f_in), qc_min, qc_max, qc_bins), f_out);
            std::printf("quantize-conf: %s -> %s (bins %d, clamp [%g, %g])\n", f_in.c_str(),
                        f_out.c_str(), qc_bins, qc_min, qc_max);
        }
        if (f_desc->parsed()) {
            save_descriptor_map(dense_descriptors(load_cgrid(f_in), d_patch), f_out);
            std::printf("descriptors: %s -> %s\n", f_in.c_str(), f_out.c_str());
        }
        if (f_book->parsed()) {
            const DescriptorMap desc = load_descriptor_map(f_in);
            std::vector<float> samples;
            int ns = 0;
            for (int y = 0; y < desc.height; y += cb_stride) {
                for (int x = 0; x < desc.width; x += cb_stride) {
                    const float* d = desc.at(x, y);
                    samples.insert(samples.end(), d, d + desc.dim);
                    ++ns;
                }
            }
            const Codebook book = build_codebook(samples, ns, desc.dim, cb_k, cb_seed);
            save_codebook(book, f_out);
            std::printf("codebook: %d samples -> K=%d, distortion %.6g (%d iters)\n", ns, book.k,
                        book.distortion, book.iterations);
        }
        if (f_qd->parsed()) {
            save_feature_map(
                quantize_descriptors(load_descriptor_map(f_in), load_codebook(f_book_path)), f_out);
            std::printf("quantize-desc: %s -> %s\n", f_in.c_str(), f_out.c_str());
        }
        if (f_stack->parsed()) {
            std::vector<FeatureIndexMap> maps;
            for (const auto& p : stack_in) maps.push_back(load_feature_map(p));
            save_feature_map(stack_feature_maps(maps), f_out);
            std::printf("stack: %zu maps -> %s\n", maps.size(), f_out.c_str());
        }
        if (learn->parsed()) run_learn(lo);
        if (estimate->parsed()) run_estimate(eo);
        if (flow->parsed()) run_flow(fo);
        if (georef_fit->parsed()) run_georef_fit(gf);
        if (georef_density->parsed()) {
            gd.grid.explicit_grid = gd_oe->count() > 0;
            run_georef_density(gd);
        }
        if (georef_motion->parsed()) {
            gm.grid.explicit_grid = gm_oe->count() > 0;
            run_georef_motion(gm);
        }
        if (pressure->parsed()) run_pressure(po);
        if (eval->parsed()) run_eval(vo);
        if (render->parsed()) run_render(ro);
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
