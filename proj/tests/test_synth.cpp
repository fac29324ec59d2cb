#include <doctest.h>

#include <cmath>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/synth.hpp"

using namespace crowdflow;

TEST_SUITE_BEGIN("synth");

TEST_CASE("empty scene is background confidence only") {
    const Scene scene = generate_scene(0, 64, 48, 1);
    CHECK(scene.annotations.count() == 0);
    for (float v : scene.confidence.data()) CHECK(v == doctest::Approx(-8.0f));
    for (float v : scene.image.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("a 1440x1080 scene carries 263 annotations") {
    const Scene scene = generate_scene(263, 1440, 1080, 7);
    CHECK(scene.annotations.count() == 263);
    CHECK(scene.confidence.width() == 1440);
    CHECK(scene.confidence.height() == 1080);
    for (const auto& [x, y] : scene.annotations.points) {
        CHECK(x >= 0.0);
        CHECK(y >= 0.0);
        CHECK(x <= 1440.0);
        CHECK(y <= 1080.0);
    }
}

TEST_CASE("identical seeds produce bit-identical scenes") {
    const Scene a = generate_scene(40, 128, 96, 99);
    const Scene b = generate_scene(40, 128, 96, 99);
    CHECK(a.confidence.data() == b.confidence.data());
    CHECK(a.image.data() == b.image.data());
    CHECK(a.annotations.points == b.annotations.points);
    const Scene c = generate_scene(40, 128, 96, 100);
    CHECK(a.confidence.data() != c.confidence.data());
}

TEST_CASE("scene confidences exercise the clamp range") {
    const Scene scene = generate_scene(60, 160, 120, 11);
    float lo = 1e9f, hi = -1e9f;
    for (float v : scene.confidence.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(-8.0f).epsilon(0.01));
    CHECK(hi > -0.6f); // saturation region reached on isolated persons
}

TEST_CASE("rasterized ground truth of a scene sums to the person count") {
    const Scene scene = generate_scene(37, 96, 96, 13);
    const Grid2D gt = rasterize_ground_truth(scene.annotations, 6.0, 96, 96);
    CHECK(count_total(gt) == doctest::Approx(37.0).epsilon(1e-9));
}

TEST_CASE("overcrowded scenes are rejected") {
    CHECK_THROWS_AS(generate_scene(2000, 32, 32, 3), validation_error);
}

TEST_CASE("zero-velocity sequences repeat the first frame") {
    const Scene scene = generate_scene(10, 64, 64, 17);
    const Sequence seq = generate_sequence(scene, {VelocitySpec::Kind::Uniform, 0.0, 0.0, 0.0},
                                           4, 5);
    for (int t = 1; t < 4; ++t) {
        CHECK(seq.frames[t].data() == seq.frames[0].data());
        CHECK(seq.annotations[t].points == seq.annotations[0].points);
    }
}

TEST_CASE("uniform velocity displacement over a gap is the velocity times the gap") {
    const Scene scene = generate_scene(8, 64, 64, 19);
    const Sequence seq = generate_sequence(scene, {VelocitySpec::Kind::Uniform, 0.37, -0.22, 0.0},
                                           11, 5);
    const FlowField d = seq.gt_displacement(0, 10);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            CHECK(d.at(x, y, 0) == doctest::Approx(3.7f));
            CHECK(d.at(x, y, 1) == doctest::Approx(-2.2f));
        }
    }
    CHECK_THROWS_AS(seq.gt_displacement(5, 10), validation_error);
}

TEST_CASE("opposing streams split the frame into two half-plane populations") {
    const Scene scene = generate_scene(24, 64, 64, 21);
    const Sequence seq =
        generate_sequence(scene, {VelocitySpec::Kind::OpposingStreams, 0.5, 0.0, 0.0}, 5, 5);
    const FlowField d = seq.gt_displacement(0, 4);
    for (int x = 0; x < 64; ++x) {
        CHECK(d.at(x, 10, 0) == doctest::Approx(2.0f));  // top half moves +x
        CHECK(d.at(x, 50, 0) == doctest::Approx(-2.0f)); // bottom half moves -x
        CHECK(d.at(x, 10, 1) == 0.0f);
    }
    // annotations advect with their stream
    for (std::size_t i = 0; i < scene.persons.size(); ++i) {
        const double x0 = seq.annotations[0].points[i].first;
        const double x4 = seq.annotations[4].points[i].first;
        const double y0 = seq.annotations[0].points[i].second;
        if (y0 < 32.0) {
            CHECK(x4 == doctest::Approx(x0 + 2.0));
        } else {
            CHECK(x4 == doctest::Approx(x0 - 2.0));
        }
    }
}

TEST_CASE("rotation displacement matches the closed-form rotation") {
    const Scene scene = generate_scene(5, 64, 64, 23);
    const double omega = 0.01;
    const Sequence seq =
        generate_sequence(scene, {VelocitySpec::Kind::Rotation, 0.0, 0.0, omega}, 3, 5);
    const FlowField d = seq.gt_displacement(0, 2);
    const double a = 2.0 * omega;
    const double px = 10.5, py = 40.5; // pixel (10, 40) center
    const double ex = 32.0 + std::cos(a) * (px - 32.0) - std::sin(a) * (py - 32.0) - px;
    const double ey = 32.0 + std::sin(a) * (px - 32.0) + std::cos(a) * (py - 32.0) - py;
    CHECK(d.at(10, 40, 0) == doctest::Approx(ex).epsilon(1e-5));
    CHECK(d.at(10, 40, 1) == doctest::Approx(ey).epsilon(1e-5));
}

TEST_CASE("sequences that would push a person out of frame are rejected") {
    const Scene scene = generate_scene(12, 64, 64, 25);
    CHECK_THROWS_AS(
        generate_sequence(scene, {VelocitySpec::Kind::Uniform, 30.0, 0.0, 0.0}, 5, 5),
        validation_error);
}

TEST_CASE("planted training: zero weights, frame-sum tally, coverage check") {
    const auto zero = generate_planted_training(2, 3, {0.0, 0.0, 0.0}, 16, 16, 31);
    for (const auto& inst : zero) CHECK(count_total(inst.gt_density) == 0.0);

    const std::vector<double> wstar = {0.1, 0.0, 0.4};
    const auto planted = generate_planted_training(3, 3, wstar, 16, 16, 33);
    for (const auto& inst : planted) {
        long long n0 = 0, n2 = 0;
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                if (inst.features.at(x, y) == 0) ++n0;
                if (inst.features.at(x, y) == 2) ++n2;
            }
        }
        CHECK(count_total(inst.gt_density) ==
              doctest::Approx(0.1 * n0 + 0.4 * n2).epsilon(1e-6));
    }

    // 4x4 frame cannot cover a 50-word vocabulary
    CHECK_THROWS_AS(generate_planted_training(1, 50, std::vector<double>(50, 0.1), 4, 4, 35),
                    validation_error);
    CHECK_THROWS_AS(generate_planted_training(1, 3, {0.1, -0.2, 0.3}, 8, 8, 37),
                    validation_error);
}

TEST_CASE("planted ground truth makes the linear model exact") {
    const std::vector<double> wstar = {0.05, 0.02, 0.3, 0.0};
    const auto planted = generate_planted_training(2, 4, wstar, 12, 12, 39);
    WeightVector wv;
    wv.weights = wstar;
    wv.vocab_sizes = {4};
    for (const auto& inst : planted) {
        const Grid2D re = estimate_density(inst.features, wv);
        CHECK(re.data() == inst.gt_density.data());
    }
}

TEST_SUITE_END();
