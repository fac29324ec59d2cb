#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/flow.hpp"
#include "crowdflow/georef.hpp"
#include "crowdflow/rng.hpp"

using namespace crowdflow;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

using Pairs = std::vector<std::pair<std::pair<double, double>, std::pair<double, double>>>;

Homography random_mild_homography(Rng& rng) {
    Homography h;
    h.h = {rng.uniform(0.8, 1.2),   rng.uniform(-0.1, 0.1), rng.uniform(-20.0, 20.0),
           rng.uniform(-0.1, 0.1),  rng.uniform(0.8, 1.2),  rng.uniform(-20.0, 20.0),
           rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0};
    return h;
}

} // namespace

TEST_SUITE_BEGIN("georef");

TEST_CASE("identity correspondences fit the identity homography") {
    Rng rng(81);
    Pairs pairs;
    for (int i = 0; i < 6; ++i) {
        const double x = rng.uniform(0.0, 100.0), y = rng.uniform(0.0, 100.0);
        pairs.push_back({{x, y}, {x, y}});
    }
    const Homography h = fit_homography(pairs);
    CHECK(h.rms_residual < 1e-9);
    for (int i = 0; i < 9; ++i) {
        const double expect = (i == 0 || i == 4 || i == 8) ? 1.0 : 0.0;
        CHECK(h.h[i] == doctest::Approx(expect).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("pure scale correspondences recover diag(2,2,1)") {
    Rng rng(83);
    Pairs pairs;
    for (int i = 0; i < 8; ++i) {
        const double x = rng.uniform(0.0, 50.0), y = rng.uniform(0.0, 50.0);
        pairs.push_back({{x, y}, {2.0 * x, 2.0 * y}});
    }
    const Homography h = fit_homography(pairs);
    CHECK(h.rms_residual < 1e-6);
    CHECK(h.h[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(h.h[4] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(h.h[8] == doctest::Approx(1.0));
    CHECK(std::abs(h.h[1]) < 1e-6);
    CHECK(std::abs(h.h[6]) < 1e-9);
}

TEST_CASE("a known homography is recovered from sampled correspondences") {
    Rng rng(85);
    const Homography truth = random_mild_homography(rng);
    Pairs pairs;
    for (int i = 0; i < 12; ++i) {
        const double u = rng.uniform(0.0, 640.0), v = rng.uniform(0.0, 480.0);
        pairs.push_back({{u, v}, pixel_to_world(truth, u, v)});
    }
    const Homography fit = fit_homography(pairs);
    CHECK(fit.rms_residual < 1e-6);
    for (int trial = 0; trial < 50; ++trial) {
        const double u = rng.uniform(0.0, 640.0), v = rng.uniform(0.0, 480.0);
        const auto [e1, n1] = pixel_to_world(truth, u, v);
        const auto [e2, n2] = pixel_to_world(fit, u, v);
        CHECK(std::hypot(e1 - e2, n1 - n2) < 1e-6);
    }
}

TEST_CASE("degenerate correspondence sets are rejected") {
    Pairs few = {{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}};
    CHECK_THROWS_AS(fit_homography(few), validation_error);

    Pairs dup = {{{0, 0}, {0, 0}}, {{0, 0}, {0, 0}}, {{0, 1}, {0, 1}}, {{1, 1}, {1, 1}}};
    CHECK_THROWS_AS(fit_homography(dup), validation_error);

    Pairs collinear = {{{0, 0}, {0, 0}}, {{1, 1}, {1, 1}}, {{2, 2}, {2, 2}}, {{5, 1}, {5, 1}}};
    CHECK_THROWS_AS(fit_homography(collinear), validation_error);
}

TEST_CASE("pixel to world round trips under a homography within 1e-6 px") {
    Rng rng(87);
    const Homography h = random_mild_homography(rng);
    const Homography inv = invert(h);
    for (int trial = 0; trial < 1000; ++trial) {
        const double u = rng.uniform(0.0, 1440.0), v = rng.uniform(0.0, 1080.0);
        const auto [e, n] = pixel_to_world(h, u, v);
        const auto [u2, v2] = pixel_to_world(inv, e, n);
        REQUIRE(std::hypot(u2 - u, v2 - v) < 1e-6);
    }
}

TEST_CASE("nadir pose geometry: principal point, similar triangles, horizon") {
    CameraPose pose;
    pose.center_e = 500.0;
    pose.center_n = 600.0;
    pose.center_h = 100.0;
    pose.focal_px = 1000.0;
    pose.pp_u = 320.0;
    pose.pp_v = 240.0;
    pose.terrain_h = 0.0;

    const auto [e0, n0] = pixel_to_world(pose, 320.0, 240.0);
    CHECK(e0 == doctest::Approx(500.0));
    CHECK(n0 == doctest::Approx(600.0));

    // 100 px off the principal point at f=1000 px from 100 m -> 10 m offset
    const auto [e1, n1] = pixel_to_world(pose, 420.0, 240.0);
    CHECK(e1 == doctest::Approx(510.0));
    CHECK(n1 == doctest::Approx(600.0));
    // image v runs south
    const auto [e2, n2] = pixel_to_world(pose, 320.0, 340.0);
    CHECK(e2 == doctest::Approx(500.0));
    CHECK(n2 == doctest::Approx(590.0));

    CameraPose sideways = pose;
    sideways.omega = M_PI / 2.0; // optical axis horizontal
    CHECK_THROWS_AS(pixel_to_world(sideways, 320.0, 240.0), validation_error);

    CameraPose invalid = pose;
    invalid.center_h = -5.0;
    CHECK_THROWS_AS(pixel_to_world(invalid, 320.0, 240.0), validation_error);
}

TEST_CASE("identity-scale rectification reproduces the density map") {
    Rng rng(91);
    Grid2D density(16, 12, 1);
    for (float& v : density.data()) v = static_cast<float>(rng.uniform(0.0, 2.0));
    Homography ident;
    const WorldGrid spec(0.0, 0.0, 1.0, 16, 12, 32633, 1);
    RectifyStats stats;
    const WorldGrid world = rectify_density(density, ident, spec, 0.0, &stats);
    for (int j = 0; j < 12; ++j) {
        for (int i = 0; i < 16; ++i) CHECK(world.at(i, j) == density.at(i, j));
    }
    CHECK(stats.out_of_grid_mass == 0.0);
    CHECK(stats.in_mass == doctest::Approx(count_total(density)).epsilon(1e-12));
}

TEST_CASE("pixels landing in one cell sum their contributions") {
    Grid2D density(2, 1, 1);
    density.at(0, 0) = 0.3f;
    density.at(1, 0) = 0.7f;
    Homography half;
    half.h = {0.5, 0, 0, 0, 0.5, 0, 0, 0, 1};
    const WorldGrid spec(0.0, 0.0, 1.0, 1, 1, 32633, 1);
    const WorldGrid world = rectify_density(density, half, spec, 0.0);
    CHECK(world.at(0, 0) == doctest::Approx(1.0f));
}

TEST_CASE("mass conservation under random homographies, before and after smoothing") {
    Rng rng(93);
    for (int trial = 0; trial < 10; ++trial) {
        const Homography h = random_mild_homography(rng);
        Grid2D density(40, 30, 1);
        for (float& v : density.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
        const double image_sum = count_total(density);
        const WorldGrid spec = fit_world_grid(h, 40, 30, 0.5, 32633, 1);

        RectifyStats stats;
        const WorldGrid raw = rectify_density(density, h, spec, 0.0, &stats);
        CHECK(stats.out_of_grid_mass == 0.0);
        double raw_sum = 0.0;
        for (float v : raw.values) raw_sum += v;
        REQUIRE(std::abs(raw_sum - image_sum) <= 1e-6 * image_sum);

        const WorldGrid smoothed = rectify_density(density, h, spec, 2.0);
        double smooth_sum = 0.0;
        for (float v : smoothed.values) {
            CHECK(v >= 0.0f);
            smooth_sum += v;
        }
        REQUIRE(std::abs(smooth_sum - image_sum) <= 1e-6 * image_sum);
    }
}

TEST_CASE("static scene seen from two poses yields near-zero world velocity") {
    // Flow equals the camera-induced parallax exactly; the two mappings must
    // cancel it.
    CameraPose pose_t;
    pose_t.center_e = 100.0;
    pose_t.center_n = 200.0;
    pose_t.center_h = 50.0;
    pose_t.focal_px = 2000.0;
    pose_t.pp_u = 32.0;
    pose_t.pp_v = 32.0;
    pose_t.terrain_h = 0.0;
    CameraPose pose_gap = pose_t;
    pose_gap.center_e += 0.75; // 30 px parallax at h/f = 0.025 m/px
    pose_gap.center_n -= 0.40;

    FlowField flow(64, 64, 2);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const auto [e, n] = pixel_to_world(pose_t, x + 0.5, y + 0.5);
            // exact pixel of the same ground point in the second view
            const double u2 = pose_gap.pp_u + (e - pose_gap.center_e) / (pose_gap.center_h) *
                                                  pose_gap.focal_px;
            const double v2 = pose_gap.pp_v - (n - pose_gap.center_n) / (pose_gap.center_h) *
                                                  pose_gap.focal_px;
            flow.at(x, y, 0) = static_cast<float>(u2 - (x + 0.5));
            flow.at(x, y, 1) = static_cast<float>(v2 - (y + 0.5));
        }
    }
    const WorldGrid spec = fit_world_grid(pose_t, 64, 64, 0.25, 32633, 2);
    const VelocityField vel = rectify_motion(flow, pose_t, pose_gap, 0.4, spec);
    double mean_speed = 0.0;
    long long n_cells = 0;
    for (int j = 0; j < vel.height; ++j) {
        for (int i = 0; i < vel.width; ++i) {
            if (vel.is_nodata(i, j)) continue;
            mean_speed += std::hypot(vel.at(i, j, 0), vel.at(i, j, 1));
            ++n_cells;
        }
    }
    REQUIRE(n_cells > 0);
    CHECK(mean_speed / n_cells <= 0.05);
}

TEST_CASE("planted displacement maps to the expected metric speed") {
    // 0.1 m/px scale: 10 px flow = 1 m displacement; dt = 0.4 s -> 2.5 m/s.
    Homography scale;
    scale.h = {0.1, 0, 0, 0, 0.1, 0, 0, 0, 1};
    FlowField flow(32, 32, 2, 10.0f);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) flow.at(x, y, 1) = 0.0f;
    }
    const WorldGrid spec(0.0, 0.0, 0.25, 20, 20, 32633, 2);
    const VelocityField vel = rectify_motion(flow, scale, scale, 0.4, spec);
    for (int j = 0; j < vel.height; ++j) {
        for (int i = 0; i < vel.width; ++i) {
            if (vel.is_nodata(i, j)) continue;
            CHECK(vel.at(i, j, 0) == doctest::Approx(2.5).epsilon(1e-4));
            CHECK(std::abs(vel.at(i, j, 1)) < 1e-6);
        }
    }
    CHECK_THROWS_AS(rectify_motion(flow, scale, scale, 0.0, spec), validation_error);
}

TEST_CASE("zero flow under a static camera gives zero velocity") {
    Homography ident;
    const FlowField flow(16, 16, 2, 0.0f);
    const WorldGrid spec(0.0, 0.0, 1.0, 16, 16, 32633, 2);
    const VelocityField vel = rectify_motion(flow, ident, ident, 0.4, spec);
    for (int j = 0; j < 16; ++j) {
        for (int i = 0; i < 16; ++i) {
            if (vel.is_nodata(i, j)) continue;
            CHECK(vel.at(i, j, 0) == 0.0f);
            CHECK(vel.at(i, j, 1) == 0.0f);
        }
    }
}

TEST_CASE("ESRI ASCII export round trips exactly and carries the EPSG sidecar") {
    Rng rng(95);
    WorldGrid g(443000.125, 5259000.5, 0.25, 9, 7, 32633, 1);
    for (float& v : g.values) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    g.at(4, 3) = g.nodata;
    const std::string path = tmp_path("grid.asc");
    export_world_grid(g, path, WorldExportFormat::EsriAscii);
    const WorldGrid back = import_esri_ascii(path);
    CHECK(back.width == 9);
    CHECK(back.height == 7);
    CHECK(back.origin_e == doctest::Approx(g.origin_e));
    CHECK(back.origin_n == doctest::Approx(g.origin_n));
    CHECK(back.cell_size == doctest::Approx(0.25));
    CHECK(back.epsg == 32633);
    for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(back.values[i] == g.values[i]);

    std::ifstream prj(path + ".prj");
    std::string tag;
    std::getline(prj, tag);
    CHECK(tag == "EPSG:32633");

    // single-cell example: one row holding "5"
    WorldGrid tiny(0.0, 0.0, 1.0, 1, 1, 32633, 1);
    tiny.at(0, 0) = 5.0f;
    const std::string tiny_path = tmp_path("tiny.asc");
    export_world_grid(tiny, tiny_path, WorldExportFormat::EsriAscii);
    std::ifstream in(tiny_path);
    std::string line, last;
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    CHECK(last == "5");
}

TEST_CASE("GeoJSON export writes one point per valid cell") {
    WorldGrid g(10.0, 20.0, 2.0, 2, 2, 32633, 1);
    g.at(0, 0) = 1.5f;
    g.at(1, 0) = g.nodata;
    g.at(0, 1) = 2.5f;
    g.at(1, 1) = 3.5f;
    const std::string path = tmp_path("grid.geojson");
    export_world_grid(g, path, WorldExportFormat::GeoJsonPoints);
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    CHECK(j["type"] == "FeatureCollection");
    CHECK(j["properties"]["epsg"] == 32633);
    REQUIRE(j["features"].size() == 3); // nodata cell skipped
    CHECK(j["features"][0]["geometry"]["coordinates"][0] == doctest::Approx(11.0));
    CHECK(j["features"][0]["geometry"]["coordinates"][1] == doctest::Approx(21.0));
    CHECK(j["features"][0]["properties"]["value"] == doctest::Approx(1.5));
}

TEST_CASE("above-horizon pixels are excluded from footprints and tallied") {
    // tilt the camera so the image's upper rows look above the horizon
    CameraPose pose;
    pose.center_e = 0.0;
    pose.center_n = 0.0;
    pose.center_h = 30.0;
    pose.focal_px = 64.0; // very wide field of view
    pose.pp_u = 32.0;
    pose.pp_v = 32.0;
    pose.terrain_h = 0.0;
    pose.omega = 1.3; // pitched so the top of the frame crosses the horizon

    int above = 0, below = 0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            try {
                pixel_to_world(pose, x + 0.5, y + 0.5);
                ++below;
            } catch (const validation_error&) {
                ++above;
            }
        }
    }
    REQUIRE(above > 0);
    REQUIRE(below > 0);

    const WorldGrid spec = fit_world_grid(pose, 64, 64, 5.0, 32633, 1);
    Grid2D density(64, 64, 1, 1.0f);
    RectifyStats stats;
    const WorldGrid world = rectify_density(density, pose, spec, 0.0, &stats);
    CHECK(stats.skipped_pixels == above);
    CHECK(stats.in_mass + stats.out_of_grid_mass == doctest::Approx(64.0 * 64.0));
    double world_sum = 0.0;
    for (float v : world.values) world_sum += v;
    CHECK(world_sum == doctest::Approx(stats.in_mass).epsilon(1e-9));
}

TEST_CASE("per-square-meter conversion divides by cell area and keeps nodata") {
    WorldGrid mass(0.0, 0.0, 0.5, 2, 1, 32633, 1);
    mass.at(0, 0) = 3.0f;
    mass.at(1, 0) = mass.nodata;
    const WorldGrid per_m2 = density_to_per_m2(mass);
    CHECK(per_m2.at(0, 0) == doctest::Approx(12.0f)); // 3 persons / 0.25 m^2
    CHECK(per_m2.at(1, 0) == per_m2.nodata);
}

TEST_CASE("GeoJSON velocity export writes both components") {
    VelocityField v(0.0, 0.0, 1.0, 2, 1, 32633, 2, 0.0f);
    v.at(0, 0, 0) = 1.5f;
    v.at(0, 0, 1) = -0.5f;
    v.at(1, 0, 0) = v.nodata;
    v.at(1, 0, 1) = v.nodata;
    const std::string path = tmp_path("vel.geojson");
    export_world_grid(v, path, WorldExportFormat::GeoJsonPoints);
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    REQUIRE(j["features"].size() == 1);
    CHECK(j["features"][0]["properties"]["v_east"] == doctest::Approx(1.5));
    CHECK(j["features"][0]["properties"]["v_north"] == doctest::Approx(-0.5));
}

TEST_CASE("mapping files round trip for both kinds") {
    Homography h;
    h.h = {1.5, 0.25, -20.0, -0.1, 2.0, 30.0, 1e-5, -2e-5, 1.0};
    const std::string hpath = tmp_path("map.homog");
    save_mapping(h, hpath);
    const PixelMapping hback = load_mapping(hpath);
    REQUIRE(std::holds_alternative<Homography>(hback));
    for (int i = 0; i < 9; ++i) {
        CHECK(std::get<Homography>(hback).h[i] == doctest::Approx(h.h[i]).epsilon(1e-15));
    }

    CameraPose p;
    p.center_e = 443100.5;
    p.center_n = 5259200.25;
    p.center_h = 80.0;
    p.omega = 0.1;
    p.phi = -0.05;
    p.kappa = 1.7;
    p.focal_px = 1800.0;
    p.pp_u = 720.0;
    p.pp_v = 540.0;
    p.terrain_h = 12.5;
    const std::string ppath = tmp_path("map.pose");
    save_mapping(p, ppath);
    const PixelMapping pback = load_mapping(ppath);
    REQUIRE(std::holds_alternative<CameraPose>(pback));
    CHECK(std::get<CameraPose>(pback).center_e == doctest::Approx(p.center_e));
    CHECK(std::get<CameraPose>(pback).kappa == doctest::Approx(p.kappa));
    CHECK(std::get<CameraPose>(pback).terrain_h == doctest::Approx(p.terrain_h));

    {
        std::ofstream bad(hpath);
        bad << "HOMOG 1\n1 2 3\n";
    }
    CHECK_THROWS_AS(load_mapping(hpath), io_error);
}

TEST_SUITE_END();
