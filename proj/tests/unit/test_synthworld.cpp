#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vdprobe/error.hpp"
#include "vdprobe/metrics/metrics.hpp"
#include "vdprobe/synthworld/dataset.hpp"

using namespace vdprobe;
using namespace vdprobe::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("vdprobe_synth_" + name);
    fs::remove_all(p);
    return p;
}

DatasetSpec tiny_dataset(int count) {
    DatasetSpec d;
    d.seed = 11;
    d.count = count;
    d.height = 32;
    d.width = 32;
    d.tracks = 16;
    return d;
}

std::size_t pixel(const SceneSample& s, int f, int x, int y) {
    return (static_cast<std::size_t>(f) * s.height + y) * s.width + x;
}

// True when the 3x3 neighbourhood around (x, y) in frame f is all `obj`.
bool surrounded_by(const SceneSample& s, int f, int x, int y, std::uint8_t obj) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= s.width || yy >= s.height) return false;
            if (s.segment[pixel(s, f, xx, yy)] != obj) return false;
        }
    return true;
}

}  // namespace

TEST_CASE("static scene under a fixed camera") {
    SceneSpec spec = random_scene(5, Action::still, CameraMotion::fixed, 9, 32, 32);
    spec.num_tracks = 16;
    SceneSample s = generate(spec);
    const std::size_t frame = static_cast<std::size_t>(s.height) * s.width * 3;
    for (int f = 1; f < s.frames; ++f) {
        CHECK(std::equal(s.video.begin(), s.video.begin() + frame, s.video.begin() + f * frame));
    }
    for (int k = 0; k < s.num_tracks; ++k) {
        for (int f = 1; f < s.frames; ++f) {
            const std::size_t a = static_cast<std::size_t>(k) * s.frames, b = a + f;
            CHECK(s.track_pos[a * 2] == s.track_pos[b * 2]);
            CHECK(s.track_pos[a * 2 + 1] == s.track_pos[b * 2 + 1]);
        }
    }
    const std::array<float, 12> id{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    CHECK(s.pose == id);
}

TEST_CASE("generation is deterministic") {
    SceneSpec spec = random_scene(6, Action::left_to_right, CameraMotion::orbit, 9, 32, 32);
    CHECK(generate(spec) == generate(spec));
    CHECK(encode_sample(generate(spec)) == encode_sample(generate(spec)));
}

TEST_CASE("zero objects is rejected") {
    SceneSpec spec;
    CHECK_THROWS_AS(generate(spec), ValidationError);
}

TEST_CASE("non-static actions move the primary object") {
    for (Action a : {Action::left_to_right, Action::right_to_left, Action::approach, Action::recede, Action::rotate}) {
        SceneSpec spec = random_scene(7, a, CameraMotion::fixed, 9, 32, 32);
        const ObjectSpec& o = spec.objects[0];
        CHECK((o.dx != 0.0 || o.dz != 0.0 || o.dyaw != 0.0));
        CHECK(spec.objects.size() >= 2);
        CHECK(spec.objects.size() <= 6);
    }
}

TEST_CASE("a nearer object hides tracked points behind it") {
    // A sphere sweeps across a box twice as far away.
    SceneSpec spec;
    spec.seed = 3;
    spec.height = spec.width = 48;
    spec.num_tracks = 600;
    ObjectSpec a;
    a.kind = ObjectKind::sphere;
    a.size = 0.35;
    a.x = -1.0;
    a.dx = 2.0;
    a.z = 2.0;
    ObjectSpec b;
    b.kind = ObjectKind::box;
    b.size = 0.6;
    b.z = 4.0;
    b.color = {0.2, 0.3, 0.9};
    spec.action = Action::left_to_right;
    spec.objects = {a, b};
    SceneSample s = generate(spec);

    int occluded_checked = 0;
    for (int k = 0; k < s.num_tracks; ++k) {
        if (s.track_obj[static_cast<std::size_t>(k)] != 1) continue;
        for (int f = 1; f < s.frames; ++f) {
            const std::size_t idx = static_cast<std::size_t>(k) * s.frames + f;
            if (!s.track_in[idx]) continue;
            const int x = static_cast<int>(std::floor(s.track_pos[idx * 2]));
            const int y = static_cast<int>(std::floor(s.track_pos[idx * 2 + 1]));
            if (surrounded_by(s, f, x, y, 0)) {
                // The z-buffer holds A here, and A is nearer.
                CHECK(s.depth[pixel(s, f, x, y)] < 3.0f);
                CHECK(s.track_vis[idx] == 0);
                ++occluded_checked;
            }
            if (s.track_vis[idx]) CHECK(s.segment[pixel(s, f, x, y)] != 0);
        }
    }
    CHECK(occluded_checked > 0);
}

TEST_CASE("visible track depth matches the depth buffer") {
    SceneSpec spec = random_scene(8, Action::still, CameraMotion::fixed, 5, 32, 32);
    spec.num_tracks = 32;
    SceneSample s = generate(spec);
    for (int k = 0; k < s.num_tracks; ++k) {
        for (int f = 0; f < s.frames; ++f) {
            const std::size_t idx = static_cast<std::size_t>(k) * s.frames + f;
            if (!s.track_vis[idx]) continue;
            const double u = s.track_pos[idx * 2], v = s.track_pos[idx * 2 + 1];
            const int x = static_cast<int>(std::floor(u)), y = static_cast<int>(std::floor(v));
            CHECK(std::abs(raycast_depth(spec, f, u, v) - s.depth[pixel(s, f, x, y)]) <= 1e-3);
        }
    }
}

TEST_CASE("projection examples") {
    Camera cam;
    cam.f = 1.0;
    auto p = project(Eigen::Vector3d(0, 0, 2), cam);
    CHECK(p.u == cam.cx);
    CHECK(p.v == cam.cy);
    CHECK(p.depth == 2.0);

    // Moving the camera +x by 0.5 is t = -0.5 in world->camera form.
    Camera moved = cam;
    moved.f = 64.0;
    cam.f = 64.0;
    moved.t = Eigen::Vector3d(-0.5, 0, 0);
    const Eigen::Vector3d x(0.3, 0.1, 2.5);
    const double shift = project(x, cam).u - project(x, moved).u;
    CHECK(shift == doctest::Approx(64.0 * 0.5 / 2.5).epsilon(1e-12));

    CHECK_THROWS_AS(project(Eigen::Vector3d(0, 0, kNearPlane), cam), ValidationError);
    CHECK_THROWS_AS(project(Eigen::Vector3d(0, 0, -1), cam), ValidationError);
}

TEST_CASE("overlaps show the nearer object") {
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        SceneSpec spec = random_scene(seed, Action::left_to_right, CameraMotion::translate, 5, 32, 32);
        spec.num_tracks = 0;
        SceneSample all = generate(spec);
        std::vector<SceneSample> alone;
        for (const auto& o : spec.objects) {
            SceneSpec one = spec;
            one.objects = {o};
            alone.push_back(generate(one));
        }
        for (std::size_t px = 0; px < all.depth.size(); ++px) {
            int nearest = -1;
            int hits = 0;
            for (std::size_t k = 0; k < alone.size(); ++k) {
                if (alone[k].segment[px] != 0) continue;
                ++hits;
                if (nearest < 0 || alone[k].depth[px] < alone[static_cast<std::size_t>(nearest)].depth[px]) {
                    nearest = static_cast<int>(k);
                }
            }
            if (hits < 2) continue;
            const auto& src = alone[static_cast<std::size_t>(nearest)];
            CHECK(all.segment[px] == nearest);
            for (int c = 0; c < 3; ++c) CHECK(all.video[px * 3 + c] == src.video[px * 3 + c]);
        }
    }
}

TEST_CASE("visible tracked points lie in their object's box") {
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
        SceneSpec spec = random_scene(seed, static_cast<Action>(seed % kNumActions),
                                      static_cast<CameraMotion>(seed % kNumCameraMotions), 9, 32, 32);
        spec.num_tracks = 64;
        SceneSample s = generate(spec);
        for (int k = 0; k < s.num_tracks; ++k) {
            const int obj = s.track_obj[static_cast<std::size_t>(k)];
            if (obj < 0) continue;
            int box = -1;
            for (int b = 0; b < s.num_boxes; ++b) {
                if (s.box_obj[static_cast<std::size_t>(b)] == obj) box = b;
            }
            if (box < 0) continue;
            for (int f = 0; f < s.frames; ++f) {
                const std::size_t idx = static_cast<std::size_t>(k) * s.frames + f;
                if (!s.track_vis[idx]) continue;
                const float* bb = s.boxes.data() + (static_cast<std::size_t>(box) * s.frames + f) * 4;
                const double u = s.track_pos[idx * 2] / s.width, v = s.track_pos[idx * 2 + 1] / s.height;
                CHECK(u >= bb[0] - 1e-6);
                CHECK(u <= bb[2] + 1e-6);
                CHECK(v >= bb[1] - 1e-6);
                CHECK(v <= bb[3] + 1e-6);
            }
        }
    }
}

TEST_CASE("relative pose maps first-camera points onto the last camera") {
    for (CameraMotion cm : {CameraMotion::translate, CameraMotion::orbit}) {
        SceneSpec spec = random_scene(40, Action::still, cm, 9, 64, 64);
        spec.num_tracks = 0;
        SceneSample s = generate(spec);
        const Camera c0 = s.camera_at(0), cl = s.camera_at(s.frames - 1);
        metrics::Pose p;
        for (int i = 0; i < 12; ++i) p[static_cast<std::size_t>(i)] = s.pose[static_cast<std::size_t>(i)];
        for (const auto& y : metrics::virtual_cube()) {
            const Eigen::Vector3d world = c0.R.transpose() * (y - c0.t);
            const Projection want = project(world, cl);
            const Eigen::Vector3d moved = metrics::apply_pose(p, y);
            const double u = cl.f * moved.x() / moved.z() + cl.cx;
            const double v = cl.f * moved.y() / moved.z() + cl.cy;
            CHECK(std::abs(u - want.u) < 1e-4);
            CHECK(std::abs(v - want.v) < 1e-4);
        }
    }
}

TEST_CASE("box filter drops tiny objects and caps the count") {
    SceneSpec spec;
    spec.height = spec.width = 32;
    spec.num_tracks = 0;
    ObjectSpec big;
    big.size = 0.6;
    ObjectSpec tiny = big;
    tiny.size = 0.02;
    tiny.x = 1.0;
    spec.objects = {big, tiny};
    SceneSample s = generate(spec);
    CHECK(s.num_boxes == 1);
    CHECK(s.box_obj[0] == 0);
    for (int b = 0; b < s.num_boxes; ++b) {
        const float* bb = s.boxes.data() + static_cast<std::size_t>(b) * s.frames * 4;
        CHECK((bb[2] - bb[0]) * (bb[3] - bb[1]) >= kMinBoxArea);
    }

    spec.objects.clear();
    for (int i = 0; i < 30; ++i) {
        ObjectSpec o;
        o.size = 0.3;
        o.x = -3.0 + 0.2 * i;
        o.z = 5.0 + 0.1 * i;
        spec.objects.push_back(o);
    }
    CHECK(generate(spec).num_boxes == kMaxBoxes);
}

TEST_CASE("dataset round trip, truncation and regeneration") {
    const DatasetSpec spec = tiny_dataset(3);
    const auto samples = generate_dataset(spec);
    const fs::path dir = scratch("rt");
    write_dataset(dir.string(), spec, samples);
    Dataset back = read_dataset(dir.string());
    REQUIRE(back.samples.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(encode_sample(back.samples[i]) == encode_sample(samples[i]));
    CHECK(back.spec_hash == spec.hash());

    // Regenerate from the recorded spec; the directory hash must not move.
    const fs::path again = scratch("rt2");
    write_dataset(again.string(), back.spec, generate_dataset(back.spec));
    CHECK(dataset_hash(again.string()) == dataset_hash(dir.string()));

    const fs::path victim = dir / "sample_1.bin";
    fs::resize_file(victim, fs::file_size(victim) - 7);
    try {
        read_dataset(dir.string());
        FAIL("truncated sample accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("sample_1") != std::string::npos);
        CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
    fs::remove_all(dir);
    fs::remove_all(again);
}

TEST_CASE("dataset index carries version and a recomputable spec hash") {
    const DatasetSpec spec = tiny_dataset(1);
    const fs::path dir = scratch("idx");
    write_dataset(dir.string(), spec, generate_dataset(spec));
    std::ifstream in(dir / "index.txt");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("version=1") != std::string::npos);
    CHECK(text.find("count=1") != std::string::npos);
    CHECK(text.find("spec_hash=" + spec.hash()) != std::string::npos);
    CHECK(DatasetSpec::from_kv(spec.to_kv()).hash() == spec.hash());
    fs::remove_all(dir);
}

TEST_CASE("dataset spec validation") {
    DatasetSpec d = tiny_dataset(0);
    CHECK_THROWS_AS(d.validate(), ValidationError);
    CHECK_THROWS_AS(generate_dataset(d), ValidationError);
    d.count = 2;
    DatasetSpec other = d;
    other.seed += 1;
    CHECK(d.hash() != other.hash());
}

TEST_CASE("dataset samples cycle labels and derive seeds from the base") {
    const DatasetSpec spec = tiny_dataset(12);
    for (int i = 0; i < 12; ++i) {
        const SceneSpec s = scene_spec(spec, i);
        CHECK(s.seed == spec.seed + static_cast<std::uint64_t>(i));
    }
    std::vector<int> per_action(kNumActions, 0);
    for (int i = 0; i < 12; ++i) ++per_action[static_cast<int>(scene_spec(spec, i).action)];
    for (int c : per_action) CHECK(c == 2);
}

TEST_CASE("video tensors") {
    SceneSpec spec = random_scene(9, Action::recede, CameraMotion::fixed, 5, 16, 16);
    spec.num_tracks = 0;
    SceneSample s = generate(spec);
    auto v = video_tensor(s);
    CHECK(v.shape() == nd::Shape{5, 16, 16, 3});
    for (float x : v.data<float>()) {
        CHECK(x >= -1.0f);
        CHECK(x <= 1.0f);
    }
    auto still = still_video_tensor(s);
    const auto sd = still.data<float>();
    const std::size_t frame = 16 * 16 * 3;
    for (int f = 1; f < 5; ++f) CHECK(std::equal(sd.begin(), sd.begin() + frame, sd.begin() + f * frame));
}
