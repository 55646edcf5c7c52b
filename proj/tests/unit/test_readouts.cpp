#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "../common/head_cases.hpp"
#include "doctest.h"
#include "vdprobe/error.hpp"
#include "vdprobe/probe/probe.hpp"
#include "vdprobe/readouts/readouts.hpp"
#include "vdprobe/synthworld/scene.hpp"

using namespace vdprobe;
using namespace vdprobe::readouts;
using nd::Tensor;

namespace {

using gradcheck::jitter;
using gradcheck::tiny_tracker;

Tensor random_tokens(Rng& rng, nd::Shape shape, double scale = 1.0) {
    std::vector<float> v(static_cast<std::size_t>(nd::numel_of(shape)));
    for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
    return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor random64(Rng& rng, nd::Shape shape, double scale = 1.0) {
    return gradcheck::random_f64(rng, std::move(shape), scale, false);
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized().toRotationMatrix();
}

Eigen::Matrix3d rot_z(double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

FitConfig quick_fit(std::int64_t steps, double lr, std::uint64_t seed = 0) {
    FitConfig f;
    f.steps = steps;
    f.seed = seed;
    f.adam.weight_decay = 0.0;
    f.schedule = {0.0, lr, lr * 0.1, std::min<std::int64_t>(20, steps), steps};
    return f;
}

}  // namespace

TEST_CASE("fourier encoding of the origin") {
    Tensor z = Tensor::from_vector({1, 2}, std::vector<float>{0.0f, 0.0f});
    auto e = fourier_encode(z, 8).to_f32();
    REQUIRE(e.size() == 32);
    for (int i = 0; i < 16; ++i) CHECK(e[i] == 0.0f);
    for (int i = 16; i < 32; ++i) CHECK(e[i] == 1.0f);
    // Frequency j of coordinate c: sin(2^j pi c).
    Tensor q = Tensor::from_vector({1, 1}, std::vector<double>{0.125});
    auto f = fourier_encode(q, 3).to_f64();
    CHECK(f[0] == doctest::Approx(std::sin(std::numbers::pi * 0.125)));
    CHECK(f[2] == doctest::Approx(std::sin(4 * std::numbers::pi * 0.125)));
    CHECK(f[5] == doctest::Approx(std::cos(4 * std::numbers::pi * 0.125)));
}

TEST_CASE("attentive pooling over one token returns its value projection") {
    Rng rng(1);
    AttentiveHead head(rng, {8, 8, 2, 16, 3});
    Tensor tok = random_tokens(rng, {1, 1, 8});
    auto pooled = head.pool(tok).to_f32();
    auto v = head.attn.v(tok);
    auto expect = head.attn.o(v).to_f32();
    REQUIRE(pooled.size() == expect.size());
    for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("attentive logits are bitwise invariant to token order") {
    Rng rng(2);
    AttentiveHead head(rng, {16, 16, 4, 32, 5});
    auto pl = nd::ParamList{};
    head.collect(pl, "h");
    jitter(pl, rng);
    Tensor toks = random_tokens(rng, {2, 12, 16});
    auto base = attentive_classify(head, toks).logits.to_f32();
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::int64_t> perm(24);
        for (int b = 0; b < 2; ++b) {
            std::vector<std::int64_t> p(12);
            std::iota(p.begin(), p.end(), 0);
            for (std::size_t i = 11; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
            for (int i = 0; i < 12; ++i) perm[b * 12 + i] = b * 12 + p[i];
        }
        Tensor shuffled = nd::reshape(nd::embedding(nd::reshape(toks, {24, 16}), perm), {2, 12, 16});
        CHECK(attentive_classify(head, shuffled).logits.to_f32() == base);
    }
}

TEST_CASE("untrained classifier starts at ln 10") {
    Rng rng(3);
    AttentiveHead head(rng, {128, 128, 4, 512, 10});
    double total = 0.0;
    const int batches = 20, per = 500;
    nd::NoGradScope off;
    for (int b = 0; b < batches; ++b) {
        Tensor toks = random_tokens(rng, {per, 4, 128});
        std::vector<std::int64_t> labels(per);
        for (int i = 0; i < per; ++i) labels[i] = i % 10;
        total += attentive_classify(head, toks, labels).loss->item() / batches;
    }
    CHECK(std::abs(total - std::log(10.0)) < 0.1);
}

TEST_CASE("classifier rejects labels outside the class range") {
    Rng rng(4);
    AttentiveHead head(rng, {8, 8, 2, 16, 3});
    Tensor toks = random_tokens(rng, {1, 2, 8});
    std::vector<std::int64_t> bad{3};
    CHECK_THROWS_AS(attentive_classify(head, toks, bad), ValidationError);
    std::vector<std::int64_t> neg{-1};
    CHECK_THROWS_AS(attentive_classify(head, toks, neg), ValidationError);
}

TEST_CASE("every readout head matches central finite differences in f64") {
    for (const auto& name : gradcheck::head_names()) {
        for (std::uint64_t trial = 0; trial < 10; ++trial) {
            const double err = gradcheck::head_case(name, trial);
            INFO(name << " trial " << trial << " err " << err);
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("depth decode contracts") {
    Rng rng(5);
    DepthHead head(rng, {8, 8, 2, 16, 2, 4, 3.0});
    Tensor toks = random_tokens(rng, {1, 4, 8});
    Tensor queries = Tensor::from_vector({1, 2, 2}, std::vector<float>{0.2f, 0.3f, 0.9f, 1.0f});
    auto d = depth_decode(head, toks, queries);
    CHECK(d.depth.shape() == nd::Shape{1, 2});
    CHECK_FALSE(d.loss.has_value());
    Tensor self = d.depth;
    CHECK(depth_decode(head, toks, queries, &self).loss->item() == 0.0);

    Tensor outside = Tensor::from_vector({1, 1, 2}, std::vector<float>{0.5f, 1.01f});
    CHECK_THROWS_AS(depth_decode(head, toks, outside), ValidationError);

    // Each query is decoded alone: adding a second query leaves the first.
    Tensor one = Tensor::from_vector({1, 1, 2}, std::vector<float>{0.2f, 0.3f});
    CHECK(depth_decode(head, toks, one).depth.to_f32()[0] == d.depth.to_f32()[0]);
}

TEST_CASE("bilinear upsampling and grid queries") {
    std::vector<float> c(4, 2.5f);
    for (float v : upsample_bilinear(c, 2, 2, 8, 8)) CHECK(v == 2.5f);
    // A horizontal ramp stays a ramp between cell centres.
    std::vector<float> ramp{0.0f, 1.0f};
    auto up = upsample_bilinear(ramp, 1, 2, 1, 4);
    CHECK(up == std::vector<float>{0.0f, 0.25f, 0.75f, 1.0f});
    auto g = grid_queries(2, 2);
    CHECK(g == std::vector<float>{0.25f, 0.25f, 0.75f, 0.25f, 0.25f, 0.75f, 0.75f, 0.75f});
}

TEST_CASE("depth decoder overfits one frame") {
    synth::SceneSpec spec = synth::random_scene(12, synth::Action::still, synth::CameraMotion::fixed, 1, 16, 16);
    spec.num_tracks = 0;
    auto s = synth::generate(spec);
    double mean = 0;
    for (float d : s.depth) mean += d / s.depth.size();
    Rng rng(6);
    DepthHead head(rng, {16, 32, 4, 64, 2, 6, mean});
    Tensor toks = random_tokens(rng, {1, 16, 16});
    auto q = grid_queries(16, 16);
    Tensor queries = Tensor::from_vector({1, 256, 2}, q);
    Tensor target = Tensor::from_vector({1, 256}, s.depth);
    nd::ParamList pl;
    head.collect(pl, "d");
    fit(pl, [&](Rng&) { return *depth_decode(head, toks, queries, &target).loss; }, quick_fit(300, 3e-3));
    nd::NoGradScope off;
    auto pred = depth_decode(head, toks, queries).depth.to_f32();
    CHECK(metrics::abs_rel_err(pred, s.depth) < 0.1);
}

TEST_CASE("procrustes examples") {
    CHECK((procrustes_project(Eigen::Matrix3d::Identity()).R - Eigen::Matrix3d::Identity()).norm() < 1e-12);

    const Eigen::Matrix3d r90 = rot_z(90);
    const Eigen::Matrix3d m = 2.0 * r90;
    const auto res = procrustes_project(m);
    CHECK((res.R - r90).norm() < 1e-12);
    Rng rng(7);
    const double best = (m - res.R).norm();
    bool beaten = false;
    for (int i = 0; i < 100000; ++i) beaten |= (m - random_rotation(rng)).norm() < best - 1e-7;
    CHECK_FALSE(beaten);

    Eigen::Matrix3d reflect = Eigen::Vector3d(1, 1, -1).asDiagonal();
    Eigen::Matrix3d neg = reflect * rot_z(30) * 1.7;
    CHECK(neg.determinant() < 0);
    CHECK(procrustes_project(neg).R.determinant() == doctest::Approx(1.0).epsilon(1e-9));

    // diag(3, 1, -1): two equal smallest singular values under a reflection.
    Eigen::Matrix3d degenerate = Eigen::Vector3d(3, 1, -1).asDiagonal();
    auto d = procrustes_project(degenerate);
    CHECK(d.non_unique);
    CHECK(d.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(procrustes_project(m).non_unique);

    Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(procrustes_project(bad), ValidationError);
}

TEST_CASE("procrustes output is the nearest rotation") {
    Rng rng(8);
    std::vector<Eigen::Matrix3d> samples;
    for (int i = 0; i < 10000; ++i) samples.push_back(random_rotation(rng));
    for (int i = 0; i < 100; ++i) {
        Eigen::Matrix3d m;
        for (int k = 0; k < 9; ++k) m.data()[k] = rng.normal();
        const Eigen::Matrix3d r = procrustes_project(m).R;
        CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-6);
        CHECK(std::abs(r.determinant() - 1.0) <= 1e-9);
        const double best = (m - r).norm();
        double closest = 1e300;
        for (const auto& q : samples) closest = std::min(closest, (m - q).norm());
        CHECK(best <= closest + 1e-7);
    }
}

TEST_CASE("pose head contracts") {
    Rng rng(9);
    PoseHead head(rng, 8, 16, 2, 32);
    Tensor a = random_tokens(rng, {3, 4, 8}), b = random_tokens(rng, {3, 4, 8});
    auto pf = pose_forward(head, a, b);
    REQUIRE(pf.poses.size() == 3);
    for (const auto& p : pf.poses) {
        Eigen::Matrix3d r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = p[static_cast<std::size_t>(i * 4 + j)];
        CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-6);
        CHECK(std::abs(r.determinant() - 1.0) <= 1e-9);
    }
    // A stub emitting the ground truth: zero loss, zero EPE.
    Tensor raw = pf.raw;
    auto same = pose_forward(head, a, b, &raw);
    CHECK(same.loss->item() == 0.0);
    const auto v = raw.to_f64();
    metrics::Pose gt_proj = project_pose(std::span<const double>(v).subspan(0, 12));
    CHECK(metrics::epe(same.poses[0], gt_proj) == 0.0);
    CHECK_THROWS_AS(head.forward(a, random_tokens(rng, {3, 5, 8})), ShapeError);
}

TEST_CASE("pose head overfits a static clip to the identity") {
    Rng rng(10);
    PoseHead head(rng, 16, 32, 4, 64);
    Tensor f = random_tokens(rng, {1, 16, 16});
    Tensor target = Tensor::from_vector({1, 12}, std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    const metrics::Pose id{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    nd::ParamList pl;
    head.collect(pl, "p");
    jitter(pl, rng, 0.05);
    double before = 0;
    {
        nd::NoGradScope off;
        before = metrics::epe(pose_forward(head, f, f).poses[0], id);
    }
    fit(pl, [&](Rng&) { return *pose_forward(head, f, f, &target).loss; }, quick_fit(200, 1e-3));
    nd::NoGradScope off;
    const double after = metrics::epe(pose_forward(head, f, f).poses[0], id);
    INFO("epe before " << before << " after " << after);
    CHECK(before > 0.05);
    CHECK(after < 0.05);
}

TEST_CASE("tracker state init is deterministic and steps check frame order") {
    Rng rng(11);
    Tracker tr(rng, tiny_tracker(TrackTask::point));
    Tensor q = Tensor::from_vector({1, 2, 2}, std::vector<float>{0.5f, 0.5f, 1.5f, 1.0f});
    CHECK(tr.init_state(q).state.to_f32() == tr.init_state(q).state.to_f32());
    Tensor toks = random_tokens(rng, {1, 4, 8});
    auto s0 = tr.init_state(q);
    CHECK_THROWS_AS(track_step(tr, s0, toks, 1), ValidationError);
    auto s1 = track_step(tr, s0, toks, 0);
    CHECK(s1.state.next_frame == 1);
    CHECK(s1.out.shape() == nd::Shape{1, 2, 4});
    CHECK_THROWS_AS(tr.init_state(Tensor::from_vector({1, 1, 4}, std::vector<float>(4, 0.f))), ShapeError);
}

TEST_CASE("a corrector with zeroed outputs passes the predictor through") {
    Rng rng(12);
    Tracker tr(rng, tiny_tracker(TrackTask::point));
    for (auto& l : tr.corrector) {
        for (auto* lin : {&l.attn.o, &l.mlp.fc2}) {
            for (auto& v : lin->w.mutable_data<float>()) v = 0.0f;
            for (auto& v : lin->b.mutable_data<float>()) v = 0.0f;
        }
    }
    Tensor q = Tensor::from_vector({1, 1, 2}, std::vector<float>{1.0f, 1.0f});
    auto s0 = tr.init_state(q);
    auto s1 = track_step(tr, s0, random_tokens(rng, {1, 4, 8}), 0);
    CHECK(s1.state.state.to_f32() == tr.predict(s0.state).to_f32());
}

TEST_CASE("track outputs never depend on later frames") {
    Rng rng(13);
    Tracker tr(rng, tiny_tracker(TrackTask::point));
    nd::ParamList pl;
    tr.collect(pl, "t");
    jitter(pl, rng);
    std::vector<Tensor> frames;
    for (int f = 0; f < 5; ++f) frames.push_back(random_tokens(rng, {1, 4, 8}));
    Tensor q = Tensor::from_vector({1, 3, 2}, std::vector<float>{0.2f, 0.4f, 1.0f, 1.9f, 1.5f, 0.5f});
    auto full = track_rollout(tr, q, frames).to_f32();
    for (int t = 1; t < 5; ++t) {
        std::vector<Tensor> head(frames.begin(), frames.begin() + t);
        auto part = track_rollout(tr, q, head).to_f32();
        for (int k = 0; k < 3; ++k)
            for (int f = 0; f < t; ++f)
                for (int c = 0; c < 4; ++c) CHECK(part[(k * t + f) * 4 + c] == full[(k * 5 + f) * 4 + c]);
    }
    // Changing a later frame leaves earlier outputs alone.
    frames[4] = random_tokens(rng, {1, 4, 8});
    auto changed = track_rollout(tr, q, frames).to_f32();
    for (int k = 0; k < 3; ++k)
        for (int f = 0; f < 4; ++f)
            for (int c = 0; c < 4; ++c) CHECK(changed[(k * 5 + f) * 4 + c] == full[(k * 5 + f) * 4 + c]);
}

TEST_CASE("visibility decision is strict on both probabilities") {
    auto logit = [](double p) { return std::log(p / (1 - p)); };
    CHECK(point_visibility_decision(logit(0.7), logit(0.6)));
    CHECK_FALSE(point_visibility_decision(logit(0.7), logit(0.4)));
    CHECK_FALSE(point_visibility_decision(0.0, logit(0.9)));
    CHECK_FALSE(point_visibility_decision(logit(0.9), 0.0));
}

TEST_CASE("tracking loss examples") {
    const double big = 30.0;
    SUBCASE("oracle predictions") {
        // 1 batch, 2 tracks, 2 frames; track 1 is occluded in frame 1.
        std::vector<float> pos{1, 1, 2, 1, 3, 3, 3, 4};
        std::vector<float> vis{1, 1, 1, 0};
        std::vector<float> pred;
        for (int i = 0; i < 4; ++i) {
            pred.insert(pred.end(), {pos[i * 2], pos[i * 2 + 1], static_cast<float>(vis[i] ? big : -big),
                                     static_cast<float>(big)});
        }
        TrackTargets gt{Tensor::from_vector({1, 2, 2, 2}, pos), Tensor::from_vector({1, 2, 2}, vis),
                        Tensor::from_vector({1, 2, 2}, std::vector<float>(4, 1.0f))};
        CHECK(tracking_loss(Tensor::from_vector({1, 2, 2, 4}, pred), gt, TrackTask::point).item() < 1e-3);
    }
    SUBCASE("out-of-scene positions are ignored") {
        std::vector<float> vis{0};
        TrackTargets gt{Tensor::from_vector({1, 1, 1, 2}, std::vector<float>{5, 5}), Tensor::from_vector({1, 1, 1}, vis),
                        Tensor::from_vector({1, 1, 1}, std::vector<float>{0})};
        auto near = tracking_loss(Tensor::from_vector({1, 1, 1, 4}, std::vector<float>{5, 5, -3, 0}), gt, TrackTask::point);
        auto far = tracking_loss(Tensor::from_vector({1, 1, 1, 4}, std::vector<float>{500, -90, -3, 7}), gt, TrackTask::point);
        CHECK(near.item() == far.item());
    }
    SUBCASE("boxes off by 0.1") {
        std::vector<float> gt{0.1f, 0.2f, 0.5f, 0.6f, 0.3f, 0.3f, 0.7f, 0.9f};
        std::vector<float> pred;
        for (float g : gt) pred.push_back(g + 0.1f);
        TrackTargets t{Tensor::from_vector({1, 1, 2, 4}, gt), {}, {}};
        CHECK(tracking_loss(Tensor::from_vector({1, 1, 2, 4}, pred), t, TrackTask::box).item() ==
              doctest::Approx(0.01).epsilon(1e-5));
    }
    SUBCASE("misaligned targets") {
        TrackTargets t{Tensor::zeros({1, 1, 3, 4}, nd::DType::f32), {}, {}};
        CHECK_THROWS_AS(tracking_loss(Tensor::zeros({1, 1, 2, 4}, nd::DType::f32), t, TrackTask::box), ShapeError);
    }
}

TEST_CASE("tracker overfits a constant-velocity track") {
    // Tokens mark the point's cell; the track moves 1.5 px right and 1 px down
    // per frame on an 8x8 grid.
    Rng rng(14);
    TrackerConfig cfg;
    cfg.feature_dim = 16;
    cfg.state = 32;
    cfg.mlp_hidden = 64;
    Tracker tr(rng, cfg);
    const int F = 5;
    std::vector<Tensor> frames;
    std::vector<float> pos, vis, in;
    const float x0 = 1.25f, y0 = 1.5f;
    for (int f = 0; f < F; ++f) {
        const float x = x0 + 1.5f * f, y = y0 + 1.0f * f;
        std::vector<float> tok(64 * 16);
        for (int c = 0; c < 64; ++c) {
            const float cx = c % 8 + 0.5f, cy = c / 8 + 0.5f;
            const float w = std::exp(-((cx - x) * (cx - x) + (cy - y) * (cy - y)));
            for (int d = 0; d < 16; ++d) tok[c * 16 + d] = (d == 0 ? w : 0.0f) + static_cast<float>(0.05 * rng.normal());
        }
        frames.push_back(Tensor::from_vector({1, 64, 16}, tok));
        pos.insert(pos.end(), {x, y});
        vis.push_back(1.0f);
        in.push_back(1.0f);
    }
    Tensor q = Tensor::from_vector({1, 1, 2}, std::vector<float>{x0, y0});
    TrackTargets gt{Tensor::from_vector({1, 1, F, 2}, pos), Tensor::from_vector({1, 1, F}, vis),
                    Tensor::from_vector({1, 1, F}, in)};
    nd::ParamList pl;
    tr.collect(pl, "t");
    auto err = [&] {
        nd::NoGradScope off;
        auto out = track_rollout(tr, q, frames).to_f32();
        double e = 0;
        for (int f = 0; f < F; ++f) e += std::hypot(out[f * 4] - pos[f * 2], out[f * 4 + 1] - pos[f * 2 + 1]) / F;
        return e;
    };
    const double before = err();
    fit(pl, [&](Rng&) { return tracking_loss(track_rollout(tr, q, frames), gt, TrackTask::point); }, quick_fit(500, 1e-3));
    const double after = err();
    INFO("error before " << before << " after " << after);
    CHECK(before > 2.0);
    CHECK(after < 2.0);
}

TEST_CASE("readout training leaves the backbone without gradients") {
    backbone::BackboneConfig c;
    c.frames = 5;
    c.height = c.width = 16;
    c.latent_channels = 4;
    c.dim = 16;
    c.blocks = 2;
    c.heads = 2;
    c.mlp_hidden = 32;
    c.tile = 1;
    backbone::BackboneModel m(c);
    Rng rng(15);
    std::vector<float> v(static_cast<std::size_t>(5 * 16 * 16 * 3));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    Tensor video = Tensor::from_vector({5, 16, 16, 3}, v);
    AttentiveHead head(rng, {16, 16, 2, 32, 2});
    nd::ParamList hp;
    head.collect(hp, "h");
    nd::Tape tape;
    {
        nd::TapeScope scope(tape);
        auto fs = probe::extract_features(m, video, probe::ProbeSpec{100, 2, 0});
        Tensor toks = nd::reshape(fs.activations, {1, fs.activations.dim(0) * fs.activations.dim(1), 16});
        std::vector<std::int64_t> label{1};
        Tensor loss = *attentive_classify(head, toks, label).loss;
        tape.backward(loss);
    }
    for (const auto& [n, t] : m.params()) {
        INFO(n);
        CHECK_FALSE(tape.has_grad(t));
    }
    int reached = 0;
    for (const auto& [n, t] : hp) reached += tape.has_grad(t) ? 1 : 0;
    CHECK(reached == static_cast<int>(hp.size()));
}

TEST_CASE("readout checkpoints round trip") {
    Rng rng(16);
    AttentiveHead head(rng, {8, 8, 2, 16, 3});
    nd::ParamList pl;
    head.collect(pl, "cls");
    jitter(pl, rng);
    const auto path = (std::filesystem::temp_directory_path() / "vdprobe_readout.lprb").string();
    save_readout(path, pl, {{"task", "cls"}});

    Rng other(99);
    AttentiveHead fresh(other, {8, 8, 2, 16, 3});
    nd::ParamList fl;
    fresh.collect(fl, "cls");
    auto cfg = load_readout(path, fl);
    CHECK(cfg.at("task") == "cls");
    Tensor toks = random_tokens(rng, {2, 3, 8});
    CHECK(head.forward(toks).to_f32() == fresh.forward(toks).to_f32());

    AttentiveHead wrong(other, {8, 8, 2, 16, 4});
    nd::ParamList wl;
    wrong.collect(wl, "cls");
    CHECK_THROWS_AS(load_readout(path, wl), FormatError);
    std::filesystem::remove(path);
}
