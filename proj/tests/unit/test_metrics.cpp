#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "vdprobe/error.hpp"
#include "vdprobe/metrics/metrics.hpp"

using namespace vdprobe;
using namespace vdprobe::metrics;

namespace {

Pose identity_pose() { return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}; }

// Two frames; frame 0 is the query and is never scored.
TrackSet two_frame(std::vector<std::array<float, 2>> at1, std::vector<std::uint8_t> vis1) {
    TrackSet t;
    t.tracks = static_cast<int>(at1.size());
    t.frames = 2;
    for (int i = 0; i < t.tracks; ++i) {
        t.pos.insert(t.pos.end(), {0.0f, 0.0f, at1[i][0], at1[i][1]});
        t.visible.insert(t.visible.end(), {1, vis1[i]});
    }
    return t;
}

}  // namespace

TEST_CASE("top1 hand cases") {
    std::vector<float> logits{0.1f, 0.9f, 0.8f, 0.2f};
    std::vector<std::int64_t> right{1, 0};
    CHECK(top1(logits, 2, right) == 1.0);
    std::vector<float> both0{0.9f, 0.1f, 0.7f, 0.3f};
    std::vector<std::int64_t> labels{0, 1};
    CHECK(top1(both0, 2, labels) == 0.5);
    std::vector<float> tie{0.3f, 0.3f, 0.3f};
    std::vector<std::int64_t> zero{0};
    CHECK(top1(tie, 3, zero) == 1.0);
    CHECK_THROWS_AS(top1({}, 3, {}), ValidationError);
}

TEST_CASE("abs_rel_err hand cases") {
    std::vector<float> gt{1.0f, 4.0f, 0.5f};
    CHECK(abs_rel_err(gt, gt) == 0.0);
    std::vector<float> twice{2.0f, 8.0f, 1.0f};
    CHECK(abs_rel_err(twice, gt) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<float> p{2.0f, 2.0f}, g{1.0f, 4.0f};
    CHECK(abs_rel_err(p, g) == 0.75);
    // Pixels at or under the floor are skipped.
    std::vector<float> p2{2.0f, 9.0f}, g2{1.0f, 0.0f};
    CHECK(abs_rel_err(p2, g2) == 1.0);
    std::vector<float> none{0.0f};
    CHECK_THROWS_AS(abs_rel_err(none, none), ValidationError);
}

TEST_CASE("epe hand cases") {
    Pose p = identity_pose();
    CHECK(epe(p, p) == 0.0);
    Pose shifted = p;
    shifted[3] = 0.3;
    CHECK(epe(shifted, p) == doctest::Approx(0.3).epsilon(1e-12));

    // 90 degrees about z against the identity, evaluated corner by corner.
    Pose rz{0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0};
    double sum = 0.0;
    for (double x : {-0.5, 0.5})
        for (double y : {-0.5, 0.5})
            for (int z = 0; z < 2; ++z) {
                const double rx = -y, ry = x;
                sum += std::sqrt((rx - x) * (rx - x) + (ry - y) * (ry - y));
            }
    CHECK(epe(rz, p) == doctest::Approx(sum / 8.0).epsilon(1e-12));
    CHECK(epe(rz, p) == doctest::Approx(std::sqrt(0.5) * std::sqrt(2.0)).epsilon(1e-12));

    Pose bad = p;
    bad[0] = std::nan("");
    CHECK_THROWS(epe(bad, p));
}

TEST_CASE("epe is symmetric and non-negative") {
    std::mt19937 g(11);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 200; ++trial) {
        Pose a, b;
        for (auto& x : a) x = n(g);
        for (auto& x : b) x = n(g);
        CHECK(epe(a, b) >= 0.0);
        CHECK(epe(a, b) == doctest::Approx(epe(b, a)).epsilon(1e-12));
        CHECK(epe(a, a) == 0.0);
    }
}

TEST_CASE("virtual cube sits in front of the camera") {
    auto cube = virtual_cube();
    CHECK(cube.size() == 8);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& c : cube) {
        CHECK(c.z() > 0.0);
        CHECK(std::abs(std::abs(c.x()) - 0.5) == 0.0);
        mean += c / 8.0;
    }
    CHECK((mean - Eigen::Vector3d(0, 0, 2)).norm() < 1e-15);
}

TEST_CASE("average jaccard hand cases") {
    std::vector<double> d2{2.0};
    auto gt = two_frame({{10, 10}, {20, 20}}, {1, 1});
    CHECK(average_jaccard(gt, gt, d2) == 1.0);
    auto occluded = two_frame({{10, 10}, {20, 20}}, {0, 0});
    CHECK(average_jaccard(occluded, gt, d2) == 0.0);
    // A within 1 px (TP); B visible 5 px off (FP and FN).
    auto pred = two_frame({{10.6f, 10.8f}, {25, 20}}, {1, 1});
    CHECK(average_jaccard(pred, gt, d2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(average_jaccard(TrackSet{}, TrackSet{}, d2), ValidationError);
}

TEST_CASE("average jaccard is monotone in the threshold") {
    std::mt19937 g(3);
    std::uniform_real_distribution<float> u(0.0f, 30.0f);
    std::bernoulli_distribution coin(0.7);
    for (int trial = 0; trial < 50; ++trial) {
        TrackSet a, b;
        a.tracks = b.tracks = 8;
        a.frames = b.frames = 5;
        for (int i = 0; i < 8 * 5; ++i) {
            a.pos.push_back(u(g));
            a.pos.push_back(u(g));
            b.pos.push_back(u(g));
            b.pos.push_back(u(g));
            a.visible.push_back(coin(g));
            b.visible.push_back(coin(g));
        }
        double prev = -1.0;
        for (double d : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0}) {
            const double j = jaccard_at(a, b, d);
            CHECK(j >= prev);
            prev = j;
        }
    }
}

TEST_CASE("iou hand cases and range") {
    Box unit{0, 0, 1, 1};
    CHECK(iou(unit, unit) == 1.0);
    CHECK(iou(unit, Box{2, 2, 3, 3}) == 0.0);
    CHECK(iou(unit, Box{0.5, 0, 1.5, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(iou(Box{0.6, 0, 0.5, 1}, unit), ValidationError);

    std::mt19937 g(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        auto draw = [&] {
            double x0 = u(g), x1 = u(g), y0 = u(g), y1 = u(g);
            return Box{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1) + 1e-3, std::max(y0, y1) + 1e-3};
        };
        Box a = draw(), b = draw();
        const double v = iou(a, b);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mean iou skips frame 0") {
    // One box, two frames: frame 0 disagrees completely, frame 1 matches.
    std::vector<float> gt{0, 0, 0.5f, 0.5f, 0.2f, 0.2f, 0.6f, 0.6f};
    std::vector<float> pred{0.7f, 0.7f, 0.9f, 0.9f, 0.2f, 0.2f, 0.6f, 0.6f};
    CHECK(mean_iou(pred, gt, 1, 2) == 1.0);
    std::vector<float> far{0, 0, 0.5f, 0.5f, 0.7f, 0.7f, 0.9f, 0.9f};
    CHECK(mean_iou(far, gt, 1, 2) == 0.0);
}

TEST_CASE("pearson and spearman") {
    std::vector<double> xs{0.1, 0.5, 0.2, 0.9, 0.4};
    std::vector<double> affine, neg, expd;
    for (double x : xs) {
        affine.push_back(2 * x + 1);
        neg.push_back(-x);
    }
    CHECK(pearson(xs, affine) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spearman(xs, affine) == 1.0);
    CHECK(pearson(xs, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(spearman(xs, neg) == -1.0);

    std::vector<double> ys{0.3, -1.0, 2.0, 0.1, 0.2};
    for (double y : ys) expd.push_back(std::exp(y));
    CHECK(spearman(xs, ys) == spearman(xs, expd));

    std::vector<double> flat{1, 1, 1, 1, 1};
    CHECK_THROWS_AS(pearson(xs, flat), ValidationError);
    std::vector<double> one{1.0};
    CHECK_THROWS_AS(spearman(one, one), ValidationError);

    auto r = average_ranks(std::vector<double>{3, 1, 3, 2});
    CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("pearson invariant under positive affine maps") {
    std::mt19937 g(5);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(12), b(12), a2(12), b2(12);
        for (auto& v : a) v = n(g);
        for (auto& v : b) v = n(g);
        const double s = std::exp(n(g)), o = n(g) * 10;
        for (int i = 0; i < 12; ++i) {
            a2[i] = s * a[i] + o;
            b2[i] = 3.0 * b[i] - 7.0;
        }
        CHECK(std::abs(pearson(a, b) - pearson(a2, b2)) < 1e-12);
    }
}

TEST_CASE("relative change against quoted percentages") {
    CHECK(relative_change(0.360, 0.510, Direction::higher_better) == doctest::Approx(0.4167).epsilon(1e-4));
    CHECK(relative_change(2.095, 0.826, Direction::lower_better) == doctest::Approx(0.6057).epsilon(1e-4));
    CHECK(relative_change(0.449, 0.756, Direction::higher_better) == doctest::Approx(0.6837).epsilon(1e-4));
    CHECK(relative_change(0.5, 0.5, Direction::lower_better) == 0.0);
    CHECK_THROWS_AS(relative_change(0.0, 0.5, Direction::higher_better), ValidationError);
}

TEST_CASE("relative change sign tracks the better model on every table row") {
    struct Row {
        double image, video;
        Direction d;
    };
    const Row rows[] = {
        {0.461, 0.464, Direction::higher_better}, {0.607, 0.618, Direction::higher_better},
        {0.260, 0.290, Direction::higher_better}, {0.527, 0.552, Direction::higher_better},
        {0.396, 0.414, Direction::higher_better}, {0.199, 0.185, Direction::lower_better},
        {0.459, 0.586, Direction::higher_better}, {0.360, 0.510, Direction::higher_better},
        {2.095, 0.826, Direction::lower_better},  {0.449, 0.756, Direction::higher_better},
    };
    for (const auto& r : rows) {
        const bool video_better = r.d == Direction::higher_better ? r.video > r.image : r.video < r.image;
        CHECK((relative_change(r.image, r.video, r.d) > 0) == video_better);
        // Swapping the roles flips the sign.
        CHECK((relative_change(r.video, r.image, r.d) > 0) == !video_better);
    }
}

TEST_CASE("direction names round trip") {
    for (auto d : {Direction::higher_better, Direction::lower_better}) CHECK(parse_direction(direction_name(d)) == d);
    CHECK_THROWS(parse_direction("sideways"));
}
