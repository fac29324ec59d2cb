#include <doctest.h>

#include <cmath>

#include "crowdflow/error.hpp"
#include "crowdflow/pressure.hpp"
#include "crowdflow/rng.hpp"
#include "ref/reference.hpp"

using namespace crowdflow;

namespace {

VelocityField make_field(int w, int h, float ve, float vn) {
    VelocityField f(0.0, 0.0, 0.5, w, h, 32633, 2, 0.0f);
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            f.at(i, j, 0) = ve;
            f.at(i, j, 1) = vn;
        }
    }
    return f;
}

} // namespace

TEST_SUITE_BEGIN("pressure");

TEST_CASE("uniform velocity field has zero variance everywhere") {
    const std::vector<VelocityField> window = {make_field(12, 10, 1.25f, -0.5f),
                                               make_field(12, 10, 1.25f, -0.5f)};
    const WorldGrid var = velocity_variance(window, 1.0);
    for (float v : var.values) CHECK(v == 0.0f);
}

TEST_CASE("two opposite samples give population variance 1") {
    const std::vector<VelocityField> window = {make_field(5, 5, 1.0f, 0.0f),
                                               make_field(5, 5, -1.0f, 0.0f)};
    const WorldGrid var = velocity_variance(window, 0.0);
    for (float v : var.values) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("a single sample per cell yields zero variance") {
    Rng rng(101);
    VelocityField f = make_field(6, 6, 0.0f, 0.0f);
    for (float& v : f.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    const WorldGrid var = velocity_variance({f}, 0.0);
    for (float v : var.values) CHECK(v == 0.0f);
}

TEST_CASE("nodata samples are excluded from the window statistics") {
    VelocityField a = make_field(3, 1, 1.0f, 0.0f);
    VelocityField b = make_field(3, 1, -1.0f, 0.0f);
    b.at(1, 0, 0) = b.nodata;
    b.at(1, 0, 1) = b.nodata;
    const WorldGrid var = velocity_variance({a, b}, 0.0);
    CHECK(var.at(0, 0) == doctest::Approx(1.0f));
    CHECK(var.at(1, 0) == 0.0f); // only one valid sample left
    CHECK(var.at(2, 0) == doctest::Approx(1.0f));
}

TEST_CASE("variance is invariant to adding a constant velocity") {
    Rng rng(103);
    std::vector<VelocityField> window;
    for (int t = 0; t < 4; ++t) {
        VelocityField f = make_field(8, 8, 0.0f, 0.0f);
        for (float& v : f.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        window.push_back(std::move(f));
    }
    const WorldGrid base = velocity_variance(window, 1.0);
    std::vector<VelocityField> shifted = window;
    for (auto& f : shifted) {
        for (int j = 0; j < f.height; ++j) {
            for (int i = 0; i < f.width; ++i) {
                f.at(i, j, 0) += 3.5f;
                f.at(i, j, 1) -= 1.25f;
            }
        }
    }
    const WorldGrid moved = velocity_variance(shifted, 1.0);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        CHECK(moved.values[i] == doctest::Approx(base.values[i]).epsilon(1e-3).scale(1.0));
    }
}

TEST_CASE("variance is invariant under global rotation of the velocities") {
    Rng rng(105);
    std::vector<VelocityField> window;
    for (int t = 0; t < 5; ++t) {
        VelocityField f = make_field(8, 8, 0.0f, 0.0f);
        for (float& v : f.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        window.push_back(std::move(f));
    }
    const double angle = 0.83;
    const double c = std::cos(angle), s = std::sin(angle);
    std::vector<VelocityField> rotated = window;
    for (auto& f : rotated) {
        for (int j = 0; j < f.height; ++j) {
            for (int i = 0; i < f.width; ++i) {
                const double ve = f.at(i, j, 0), vn = f.at(i, j, 1);
                f.at(i, j, 0) = static_cast<float>(c * ve - s * vn);
                f.at(i, j, 1) = static_cast<float>(s * ve + c * vn);
            }
        }
    }
    const WorldGrid base = velocity_variance(window, 0.75);
    const WorldGrid rot = velocity_variance(rotated, 0.75);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        CHECK(rot.values[i] == doctest::Approx(base.values[i]).epsilon(1e-4).scale(1e-6));
    }
}

TEST_CASE("parallel variance kernel matches the serial reference") {
    Rng rng(107);
    std::vector<VelocityField> window;
    for (int t = 0; t < 3; ++t) {
        VelocityField f = make_field(14, 11, 0.0f, 0.0f);
        for (float& v : f.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        if (t == 1) {
            f.at(3, 4, 0) = f.nodata;
            f.at(3, 4, 1) = f.nodata;
        }
        window.push_back(std::move(f));
    }
    const WorldGrid par = velocity_variance(window, 1.2);
    const WorldGrid ser = ref::velocity_variance_serial(window, 1.2);
    for (std::size_t i = 0; i < par.values.size(); ++i) CHECK(par.values[i] == ser.values[i]);
}

TEST_CASE("pressure is the elementwise product with nodata propagation") {
    WorldGrid density(0.0, 0.0, 0.5, 3, 2, 32633, 1);
    WorldGrid var(0.0, 0.0, 0.5, 3, 2, 32633, 1);
    density.at(0, 0) = 2.0f;
    var.at(0, 0) = 3.0f;
    density.at(1, 0) = density.nodata;
    var.at(1, 0) = 4.0f;
    density.at(2, 0) = 1.5f;
    var.at(2, 0) = 0.0f;
    const WorldGrid p = pressure_map(density, var);
    CHECK(p.at(0, 0) == doctest::Approx(6.0f));
    CHECK(p.at(1, 0) == p.nodata);
    CHECK(p.at(2, 0) == 0.0f);

    WorldGrid wrong(0.0, 0.0, 0.5, 4, 2, 32633, 1);
    CHECK_THROWS_AS(pressure_map(density, wrong), validation_error);
}

TEST_CASE("pressure scales linearly with density and is nonnegative") {
    Rng rng(109);
    std::vector<VelocityField> window;
    for (int t = 0; t < 4; ++t) {
        VelocityField f = make_field(10, 10, 0.0f, 0.0f);
        for (float& v : f.values) v = static_cast<float>(rng.uniform(-1.5, 1.5));
        window.push_back(std::move(f));
    }
    const WorldGrid var = velocity_variance(window, 1.0);
    WorldGrid density(0.0, 0.0, 0.5, 10, 10, 32633, 1);
    for (float& v : density.values) v = static_cast<float>(rng.uniform(0.0, 4.0));
    const WorldGrid p1 = pressure_map(density, var);
    WorldGrid scaled = density;
    for (float& v : scaled.values) v *= 3.0f;
    const WorldGrid p3 = pressure_map(scaled, var);
    for (std::size_t i = 0; i < p1.values.size(); ++i) {
        CHECK(p1.values[i] >= 0.0f);
        CHECK(p3.values[i] == doctest::Approx(3.0f * p1.values[i]).epsilon(1e-6));
    }
}

TEST_CASE("variance window validates its inputs") {
    CHECK_THROWS_AS(velocity_variance({}, 1.0), validation_error);
    const VelocityField a = make_field(4, 4, 0.0f, 0.0f);
    const VelocityField b = make_field(5, 4, 0.0f, 0.0f);
    CHECK_THROWS_AS(velocity_variance({a, b}, 1.0), validation_error);
    CHECK_THROWS_AS(velocity_variance({a}, -1.0), validation_error);
}

TEST_SUITE_END();
