#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/rng.hpp"
#include "ref/reference.hpp"

using namespace crowdflow;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

AnnotationSet random_annotations(Rng& rng, int n, int width, int height) {
    AnnotationSet ann;
    ann.frame = 0;
    for (int i = 0; i < n; ++i) {
        ann.points.emplace_back(rng.uniform(0.0, width), rng.uniform(0.0, height));
    }
    return ann;
}

} // namespace

TEST_SUITE_BEGIN("density");

TEST_CASE("empty annotation set rasterizes to the zero map") {
    AnnotationSet ann;
    const Grid2D d = rasterize_ground_truth(ann, 8.0, 32, 32);
    CHECK(count_total(d) == 0.0);
}

TEST_CASE("one annotation carries unit mass after truncation and renormalization") {
    AnnotationSet ann;
    ann.points.emplace_back(16.2, 9.7);
    for (double sigma : {1.0, 4.0, 8.0, 20.0}) {
        const Grid2D d = rasterize_ground_truth(ann, sigma, 32, 24);
        CHECK(count_total(d) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("263 annotations sum to 263") {
    Rng rng(263);
    const AnnotationSet ann = random_annotations(rng, 263, 180, 135);
    const Grid2D d = rasterize_ground_truth(ann, 8.0, 180, 135);
    CHECK(count_total(d) == doctest::Approx(263.0).epsilon(1e-9));
}

TEST_CASE("mass conservation holds across random sets and sigmas") {
    Rng rng(2211);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.next_below(24));
        const double sigma = rng.uniform(1.0, 32.0);
        const AnnotationSet ann = random_annotations(rng, n, 64, 48);
        const Grid2D d = rasterize_ground_truth(ann, sigma, 64, 48);
        REQUIRE(count_total(d) ==
                doctest::Approx(static_cast<double>(n)).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("the parallel rasterizer matches the serial per-annotation splat") {
    Rng rng(5);
    const AnnotationSet ann = random_annotations(rng, 40, 96, 72);
    const Grid2D par = rasterize_ground_truth(ann, 5.0, 96, 72);
    const Grid2D ser = ref::rasterize_ground_truth_serial(ann, 5.0, 96, 72);
    for (int y = 0; y < 72; ++y) {
        for (int x = 0; x < 96; ++x) {
            REQUIRE(par.at(x, y) == doctest::Approx(ser.at(x, y)).epsilon(1e-6));
        }
    }
}

TEST_CASE("rasterization validates inputs") {
    AnnotationSet inside;
    inside.points.emplace_back(5.0, 5.0);
    CHECK_THROWS_AS(rasterize_ground_truth(inside, 0.0, 16, 16), validation_error);
    AnnotationSet outside;
    outside.points.emplace_back(-1.0, 5.0);
    CHECK_THROWS_AS(rasterize_ground_truth(outside, 2.0, 16, 16), validation_error);
    AnnotationSet beyond;
    beyond.points.emplace_back(17.0, 5.0);
    CHECK_THROWS_AS(rasterize_ground_truth(beyond, 2.0, 16, 16), validation_error);
}

TEST_CASE("zero weights estimate the zero density") {
    FeatureIndexMap feat(10, 10, {4});
    WeightVector w;
    w.weights.assign(4, 0.0);
    w.vocab_sizes = {4};
    const Grid2D d = estimate_density(feat, w);
    CHECK(count_total(d) == 0.0);
}

TEST_CASE("uniform index map with weight 0.5 counts half the pixels") {
    FeatureIndexMap feat(10, 10, {4});
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) feat.at(x, y) = 2;
    }
    WeightVector w;
    w.weights = {0.0, 0.0, 0.5, 0.0};
    w.vocab_sizes = {4};
    const Grid2D d = estimate_density(feat, w);
    CHECK(count_total(d) == doctest::Approx(50.0));
}

TEST_CASE("stacked channels add their weight contributions per pixel") {
    FeatureIndexMap feat(4, 4, {2, 3});
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            feat.at(x, y, 0) = 1; // global 1
            feat.at(x, y, 1) = 2; // global 2 + 2 = 4
        }
    }
    WeightVector w;
    w.weights = {0.0, 0.2, 0.0, 0.0, 0.3};
    w.vocab_sizes = {2, 3};
    const Grid2D d = estimate_density(feat, w);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) CHECK(d.at(x, y) == doctest::Approx(0.5f));
    }
    WeightVector short_w;
    short_w.weights = {0.1, 0.2};
    short_w.vocab_sizes = {2};
    CHECK_THROWS_AS(estimate_density(feat, short_w), validation_error);
}

TEST_CASE("estimation is linear in the weights") {
    Rng rng(41);
    FeatureIndexMap feat(12, 9, {5});
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 12; ++x) feat.at(x, y) = static_cast<std::int32_t>(rng.next_below(5));
    }
    WeightVector w1, w2, mix;
    w1.vocab_sizes = w2.vocab_sizes = mix.vocab_sizes = {5};
    for (int k = 0; k < 5; ++k) {
        w1.weights.push_back(rng.uniform(0.0, 1.0));
        w2.weights.push_back(rng.uniform(0.0, 1.0));
    }
    const double alpha = 0.7, beta = 1.3;
    for (int k = 0; k < 5; ++k) mix.weights.push_back(alpha * w1.weights[k] + beta * w2.weights[k]);
    const Grid2D d1 = estimate_density(feat, w1);
    const Grid2D d2 = estimate_density(feat, w2);
    const Grid2D dm = estimate_density(feat, mix);
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 12; ++x) {
            CHECK(dm.at(x, y) ==
                  doctest::Approx(alpha * d1.at(x, y) + beta * d2.at(x, y)).epsilon(1e-5));
        }
    }
}

TEST_CASE("count of a rasterized map equals the annotation count") {
    Rng rng(250);
    const AnnotationSet ann = random_annotations(rng, 250, 96, 96);
    const Grid2D d = rasterize_ground_truth(ann, 6.0, 96, 96);
    CHECK(count_total(d) == doctest::Approx(250.0).epsilon(1e-9));
}

TEST_CASE("region counts: whole image, excluded kernel, and additivity") {
    AnnotationSet ann;
    ann.points.emplace_back(10.0, 10.0); // 3*sigma window stays left of x=20
    const Grid2D d = rasterize_ground_truth(ann, 3.0, 64, 24);
    CHECK(count_region(d, d.full_box()) == doctest::Approx(count_total(d)));
    CHECK(count_region(d, BoxRegion(22, 0, 63, 23)) == doctest::Approx(0.0).epsilon(1e-9));

    Rng rng(9);
    const AnnotationSet many = random_annotations(rng, 30, 64, 24);
    const Grid2D dm = rasterize_ground_truth(many, 4.0, 64, 24);
    const double left = count_region(dm, BoxRegion(0, 0, 31, 23));
    const double right = count_region(dm, BoxRegion(32, 0, 63, 23));
    CHECK(left + right == doctest::Approx(count_total(dm)).epsilon(1e-9));
    CHECK_THROWS_AS(count_region(dm, BoxRegion(0, 0, 64, 23)), validation_error);
}

TEST_CASE("partition additivity over random disjoint boxes") {
    Rng rng(123);
    Grid2D d(40, 30, 1);
    for (float& v : d.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (int trial = 0; trial < 50; ++trial) {
        if (rng.next_below(2) == 0) {
            const int split = 1 + static_cast<int>(rng.next_below(38));
            const double a = count_region(d, BoxRegion(0, 0, split - 1, 29));
            const double b = count_region(d, BoxRegion(split, 0, 39, 29));
            CHECK(a + b == doctest::Approx(count_total(d)).epsilon(1e-9));
        } else {
            const int split = 1 + static_cast<int>(rng.next_below(28));
            const double a = count_region(d, BoxRegion(0, 0, 39, split - 1));
            const double b = count_region(d, BoxRegion(0, split, 39, 29));
            CHECK(a + b == doctest::Approx(count_total(d)).epsilon(1e-9));
        }
    }
}

TEST_CASE("annotation CSV round trip and error paths") {
    std::vector<AnnotationSet> sets(2);
    sets[0].frame = 3;
    sets[0].points = {{1.25, 2.5}, {10.0, 20.125}};
    sets[1].frame = 7;
    sets[1].points = {{0.5, 0.5}};
    const std::string path = tmp_path("ann.csv");
    save_annotations(sets, path);
    const auto back = load_annotations(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].frame == 3);
    CHECK(back[0].points == sets[0].points);
    CHECK(back[1].frame == 7);
    CHECK(back[1].points == sets[1].points);

    {
        std::ofstream out(path);
        out << "x,y\n1,2\n";
    }
    CHECK_THROWS_AS(load_annotations(path), io_error);
    {
        std::ofstream out(path);
        out << "frame,x,y\nnot-a-number\n";
    }
    CHECK_THROWS_AS(load_annotations(path), io_error);
}

TEST_CASE("weight vector validation") {
    WeightVector w;
    w.weights = {0.1, -0.2};
    w.vocab_sizes = {2};
    CHECK_THROWS_AS(w.validate(), validation_error);
    w.weights = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(w.validate(), validation_error);
    w.weights = {0.1, 0.2};
    CHECK_NOTHROW(w.validate());
}

TEST_SUITE_END();
