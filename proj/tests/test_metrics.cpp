#include <catch2/catch_amalgamated.hpp>
#include <svho/mesh.hpp>
#include <svho/metrics.hpp>

using namespace svho;
using Catch::Approx;

namespace {

// Axis-aligned square of side `side` in the z = z0 plane, two triangles.
Mesh square_plane(double side, double z0) {
    double h = side / 2;
    Mesh m;
    m.vertices = {{-h, -h, z0}, {h, -h, z0}, {h, h, z0}, {-h, h, z0}};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

Mesh random_primitive(Rng& rng) {
    Vec3 offset{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    Mat3 rot = Mat3::axis_angle({0, 1, 0}, rng.uniform(0, 2 * M_PI));
    switch (rng.uniform_u32(3)) {
        case 0: return make_icosphere(rng.uniform(0.02, 0.06), 2).transformed(rot, offset);
        case 1:
            return make_box({rng.uniform(0.02, 0.05), rng.uniform(0.02, 0.05),
                             rng.uniform(0.02, 0.05)})
                .transformed(rot, offset);
        default:
            return make_cylinder(rng.uniform(0.02, 0.04), rng.uniform(0.02, 0.06), 24)
                .transformed(rot, offset);
    }
}

}  // namespace

TEST_CASE("self distance is exactly zero and self f-score exactly one", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 5000;
    Mesh m = make_icosphere(0.08, 3);
    REQUIRE(chamfer_distance(m, m, cfg) == 0.0);
    REQUIRE(f_score(m, m, 0.001, cfg) == 1.0);
}

TEST_CASE("parallel planes one centimeter apart score about two", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 30000;
    Mesh a = square_plane(0.1, 0.0);
    Mesh b = square_plane(0.1, 0.01);
    double cd = chamfer_distance(a, b, cfg);
    REQUIRE(cd == Approx(2.0).epsilon(0.05));
}

TEST_CASE("chamfer distance is symmetric and non-negative", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 4000;
    Rng rng(21, 4);
    for (int trial = 0; trial < 5; ++trial) {
        Mesh a = random_primitive(rng);
        Mesh b = random_primitive(rng);
        double ab = chamfer_distance(a, b, cfg);
        double ba = chamfer_distance(b, a, cfg);
        REQUIRE(ab >= 0.0);
        REQUIRE(ab == Approx(ba).margin(1e-12));
    }
}

TEST_CASE("f-score falls to zero for far-apart meshes", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 2000;
    Mesh a = make_icosphere(0.03, 2);
    Mesh b = make_icosphere(0.03, 2).transformed(Mat3::identity(), {0.5, 0, 0});
    REQUIRE(f_score(a, b, 0.005, cfg) == 0.0);
}

TEST_CASE("dilating a sphere by half the threshold keeps f-score high", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 20000;
    double tau = 0.005;
    Mesh a = make_icosphere(0.06, 3);
    Mesh b = make_icosphere(0.06 + tau / 2, 3);
    REQUIRE(f_score(a, b, tau, cfg) > 0.95);
}

TEST_CASE("f-score is monotone in the threshold", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 1500;
    Rng rng(5, 9);
    for (int trial = 0; trial < 100; ++trial) {
        Mesh a = random_primitive(rng);
        Mesh b = random_primitive(rng);
        double prev = -1.0;
        for (double tau : {0.001, 0.002, 0.005, 0.01, 0.02, 0.05}) {
            double f = f_score(a, b, tau, cfg);
            REQUIRE(f >= prev);
            REQUIRE(f <= 1.0);
            prev = f;
        }
    }
}

TEST_CASE("units: doubling coordinates quadruples chamfer", "[metrics]") {
    MetricConfig cfg;
    cfg.n_samples = 4000;
    Rng rng(31, 2);
    Mesh a = random_primitive(rng);
    Mesh b = random_primitive(rng);
    Mat3 twice = Mat3::identity();
    twice(0, 0) = twice(1, 1) = twice(2, 2) = 2.0;
    Mesh a2 = a.transformed(twice, {0, 0, 0});
    Mesh b2 = b.transformed(twice, {0, 0, 0});
    double cd = chamfer_distance(a, b, cfg);
    REQUIRE(chamfer_distance(a2, b2, cfg) == Approx(4.0 * cd).epsilon(1e-9));
    double f = f_score(a, b, 0.01, cfg);
    REQUIRE(f_score(a2, b2, 0.02, cfg) == Approx(f).margin(1e-12));
}

TEST_CASE("alignment maps ground truth with the pose and keeps rigidity", "[metrics]") {
    Mesh pred = make_box({0.03, 0.03, 0.03});
    Mesh gt = make_icosphere(0.05, 2);

    HandPose identity;
    auto [p0, g0] = align_with_hand_pose(pred, gt, identity);
    REQUIRE(g0.vertices[0].x == Approx(gt.vertices[0].x));
    REQUIRE(p0.vertices[2].y == Approx(pred.vertices[2].y));

    HandPose moved;
    moved.translation = {0.1, -0.2, 0.3};
    auto [p1, g1] = align_with_hand_pose(pred, gt, moved);
    for (std::size_t i = 0; i < gt.vertices.size(); ++i) {
        REQUIRE(g1.vertices[i].x == Approx(gt.vertices[i].x + 0.1));
        REQUIRE(g1.vertices[i].y == Approx(gt.vertices[i].y - 0.2));
        REQUIRE(g1.vertices[i].z == Approx(gt.vertices[i].z + 0.3));
    }

    HandPose turned;
    turned.rotation = Mat3::axis_angle({0, 0, 1}, 0.7);
    turned.translation = {0.02, 0.01, -0.04};
    auto [p2, g2] = align_with_hand_pose(pred, gt, turned);
    for (std::size_t i = 1; i < gt.vertices.size(); ++i) {
        double before = (gt.vertices[i] - gt.vertices[0]).norm();
        double after = (g2.vertices[i] - g2.vertices[0]).norm();
        REQUIRE(after == Approx(before).margin(1e-9));
    }
}

TEST_CASE("kd-tree nearest agrees with brute force", "[metrics]") {
    Rng rng(17, 3);
    std::vector<Vec3> ref(200);
    for (auto& p : ref) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    KdTree3 tree(ref);
    for (int i = 0; i < 500; ++i) {
        Vec3 q{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& p : ref) best = std::min(best, (q - p).norm2());
        REQUIRE(tree.nearest2(q) == Approx(best).margin(1e-15));
    }
}

TEST_CASE("metric config validation", "[metrics]") {
    MetricConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.n_samples = 0;
    REQUIRE_THROWS(cfg.validate());
    cfg.n_samples = 100;
    cfg.f_thresholds_hand = {0.001, -0.005};
    REQUIRE_THROWS(cfg.validate());
}
