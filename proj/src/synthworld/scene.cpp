#include "vdprobe/synthworld/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vdprobe/error.hpp"
#include "vdprobe/ndgrad/rng.hpp"

namespace vdprobe::synth {

using Eigen::Matrix3d;
using Eigen::Vector3d;

namespace {

constexpr double kFloorY = 1.0;
constexpr double kWallZ = 8.0;
constexpr double kOrbitPivotZ = 4.5;
const Vector3d kLightDir = Vector3d(-0.4, 1.0, 0.5).normalized();  // direction light travels

constexpr int kFloorSurface = -1;
constexpr int kWallSurface = -2;
constexpr int kNoSurface = -3;

Matrix3d rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Matrix3d r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

struct Mesh {
    std::vector<Vector3d> verts;
    std::vector<std::array<int, 3>> tris;
    std::vector<double> tint;  // per-triangle brightness factor
    double bound = 0.0;
    double bottom = 0.0;       // max local y (y points down)
};

void finalize(Mesh& m) {
    m.bound = 0.0;
    m.bottom = -std::numeric_limits<double>::infinity();
    for (const auto& v : m.verts) {
        m.bound = std::max(m.bound, v.norm());
        m.bottom = std::max(m.bottom, v.y());
    }
}

Mesh make_mesh(ObjectKind kind, double size) {
    Mesh m;
    if (kind == ObjectKind::sphere) {
        const int stacks = 6, slices = 10;
        m.verts.emplace_back(0, -size, 0);
        for (int i = 1; i < stacks; ++i) {
            const double phi = std::numbers::pi * i / stacks;
            for (int j = 0; j < slices; ++j) {
                const double th = 2 * std::numbers::pi * j / slices;
                m.verts.emplace_back(size * std::sin(phi) * std::cos(th), -size * std::cos(phi),
                                     size * std::sin(phi) * std::sin(th));
            }
        }
        m.verts.emplace_back(0, size, 0);
        const int bottom = static_cast<int>(m.verts.size()) - 1;
        auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
        for (int j = 0; j < slices; ++j) {
            m.tris.push_back({0, ring(1, j), ring(1, j + 1)});
            m.tint.push_back(j % 2 ? 1.0 : 0.8);
        }
        for (int i = 1; i < stacks - 1; ++i) {
            for (int j = 0; j < slices; ++j) {
                const double tint = (i + j) % 2 ? 1.0 : 0.8;
                m.tris.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
                m.tris.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
                m.tint.push_back(tint);
                m.tint.push_back(tint);
            }
        }
        for (int j = 0; j < slices; ++j) {
            m.tris.push_back({bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
            m.tint.push_back((stacks - 1 + j) % 2 ? 1.0 : 0.8);
        }
    } else if (kind == ObjectKind::box) {
        const double a = size * 0.75;
        for (int i = 0; i < 8; ++i) {
            m.verts.emplace_back(i & 1 ? a : -a, i & 2 ? a : -a, i & 4 ? a : -a);
        }
        const int faces[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1}, {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
        for (int f = 0; f < 6; ++f) {
            m.tris.push_back({faces[f][0], faces[f][1], faces[f][2]});
            m.tris.push_back({faces[f][0], faces[f][2], faces[f][3]});
            m.tint.push_back(f % 2 ? 1.0 : 0.8);
            m.tint.push_back(f % 2 ? 1.0 : 0.8);
        }
    } else {
        const int segs = 12;
        const double r = size * 0.85, h = size * 1.6;
        m.verts.emplace_back(0, -h / 2, 0);  // apex (up)
        for (int j = 0; j < segs; ++j) {
            const double th = 2 * std::numbers::pi * j / segs;
            m.verts.emplace_back(r * std::cos(th), h / 2, r * std::sin(th));
        }
        m.verts.emplace_back(0, h / 2, 0);
        const int centre = segs + 1;
        for (int j = 0; j < segs; ++j) {
            const int a = 1 + j, b = 1 + (j + 1) % segs;
            m.tris.push_back({0, a, b});
            m.tint.push_back(j % 2 ? 1.0 : 0.8);
            m.tris.push_back({centre, b, a});
            m.tint.push_back(0.7);
        }
    }
    finalize(m);
    return m;
}

struct ObjectState {
    Matrix3d rot;
    Vector3d pos;
};

struct World {
    const SceneSpec* spec;
    std::vector<Mesh> meshes;

    double phase(int frame) const {
        return spec->frames > 1 ? static_cast<double>(frame) / (spec->frames - 1) : 0.0;
    }

    ObjectState object_at(std::size_t k, int frame) const {
        const ObjectSpec& o = spec->objects[k];
        const double s = phase(frame);
        ObjectState st;
        st.rot = rot_y(o.yaw + o.dyaw * s);
        st.pos = Vector3d(o.x + o.dx * s, kFloorY - meshes[k].bottom, o.z + o.dz * s);
        return st;
    }

    Camera camera_at(int frame) const {
        const double s = phase(frame);
        Camera cam;
        cam.f = spec->height;
        cam.cx = spec->width / 2.0;
        cam.cy = spec->height / 2.0;
        Vector3d centre(0, 0, 0);
        Matrix3d cam_to_world = Matrix3d::Identity();
        if (spec->camera == CameraMotion::translate) {
            centre = Vector3d(spec->cam_shift_x * s, 0, spec->cam_shift_z * s);
        } else if (spec->camera == CameraMotion::orbit) {
            const double th = spec->orbit_deg * std::numbers::pi / 180.0 * s;
            const Vector3d pivot(0, 0, kOrbitPivotZ);
            cam_to_world = rot_y(th);
            centre = pivot + cam_to_world * Vector3d(0, 0, -kOrbitPivotZ);
        }
        cam.R = cam_to_world.transpose();
        cam.t = -cam.R * centre;
        return cam;
    }
};

struct Hit {
    double depth = std::numeric_limits<double>::infinity();
    int surface = kNoSurface;
    int tri = -1;
    Vector3d normal = Vector3d::Zero();
};

// Moller-Trumbore; returns ray parameter or +inf.
double ray_triangle(const Vector3d& o, const Vector3d& d, const Vector3d& a, const Vector3d& b, const Vector3d& c) {
    const Vector3d e1 = b - a, e2 = c - a;
    const Vector3d p = d.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return std::numeric_limits<double>::infinity();
    const double inv = 1.0 / det;
    const Vector3d s = o - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
    const Vector3d q = s.cross(e1);
    const double v = d.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return std::numeric_limits<double>::infinity();
    const double t = e2.dot(q) * inv;
    return t > 0.0 ? t : std::numeric_limits<double>::infinity();
}

Hit cast(const World& w, int frame, const Camera& cam, double u, double v) {
    const Vector3d dir_cam((u - cam.cx) / cam.f, (v - cam.cy) / cam.f, 1.0);
    const Vector3d origin = -cam.R.transpose() * cam.t;
    const Vector3d dir = cam.R.transpose() * dir_cam;  // parameter along dir equals camera depth
    Hit hit;
    if (dir.y() > 1e-12) {
        const double s = (kFloorY - origin.y()) / dir.y();
        if (s > kNearPlane && s < hit.depth) {
            hit.depth = s;
            hit.surface = kFloorSurface;
        }
    }
    if (dir.z() > 1e-12) {
        const double s = (kWallZ - origin.z()) / dir.z();
        if (s > kNearPlane && s < hit.depth) {
            hit.depth = s;
            hit.surface = kWallSurface;
        }
    }
    for (std::size_t k = 0; k < w.meshes.size(); ++k) {
        const ObjectState st = w.object_at(k, frame);
        const Vector3d ol = st.rot.transpose() * (origin - st.pos);
        const Vector3d dl = st.rot.transpose() * dir;
        // Bounding-sphere rejection.
        const double b = ol.dot(dl), c = ol.squaredNorm() - w.meshes[k].bound * w.meshes[k].bound;
        const double disc = b * b - dl.squaredNorm() * c;
        if (disc < 0.0) continue;
        const Mesh& m = w.meshes[k];
        for (std::size_t ti = 0; ti < m.tris.size(); ++ti) {
            const auto& tr = m.tris[ti];
            const double s = ray_triangle(ol, dl, m.verts[tr[0]], m.verts[tr[1]], m.verts[tr[2]]);
            if (s > kNearPlane && s < hit.depth) {
                hit.depth = s;
                hit.surface = static_cast<int>(k);
                hit.tri = static_cast<int>(ti);
                const Vector3d n = (m.verts[tr[1]] - m.verts[tr[0]]).cross(m.verts[tr[2]] - m.verts[tr[0]]);
                hit.normal = (st.rot * n).normalized();
            }
        }
    }
    return hit;
}

std::array<double, 3> shade(const World& w, const Hit& hit, const Vector3d& world_point, const Vector3d& dir) {
    if (hit.surface == kFloorSurface) {
        const int parity = (static_cast<int>(std::floor(world_point.x() / 0.5)) +
                            static_cast<int>(std::floor(world_point.z() / 0.5))) & 1;
        const double g = parity ? 0.72 : 0.42;
        return {g, g, g * 0.9};
    }
    if (hit.surface == kWallSurface) {
        const int parity = (static_cast<int>(std::floor(world_point.x() / 0.6)) +
                            static_cast<int>(std::floor(world_point.y() / 0.6))) & 1;
        const double g = parity ? 0.62 : 0.34;
        return {g * 0.85, g * 0.9, g};
    }
    const ObjectSpec& o = w.spec->objects[static_cast<std::size_t>(hit.surface)];
    Vector3d n = hit.normal;
    if (n.dot(dir) > 0) n = -n;
    const double lambert = std::max(0.0, n.dot(-kLightDir));
    const double k = w.meshes[static_cast<std::size_t>(hit.surface)].tint[static_cast<std::size_t>(hit.tri)] *
                     (0.35 + 0.65 * lambert);
    return {o.color[0] * k, o.color[1] * k, o.color[2] * k};
}

World make_world(const SceneSpec& spec) {
    World w{&spec, {}};
    for (const auto& o : spec.objects) {
        w.meshes.push_back(make_mesh(o.kind, o.size));
    }
    return w;
}

std::uint8_t to_u8(double c) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(c * 255.0), 0L, 255L));
}

}  // namespace

std::string action_name(Action a) {
    static const char* names[] = {"left_to_right", "right_to_left", "approach", "recede", "rotate", "static"};
    return names[static_cast<int>(a)];
}

Action parse_action(const std::string& s) {
    for (int i = 0; i < kNumActions; ++i) {
        if (action_name(static_cast<Action>(i)) == s) return static_cast<Action>(i);
    }
    throw ValidationError("unknown action '" + s + "'");
}

std::string camera_name(CameraMotion c) {
    static const char* names[] = {"static", "translate", "orbit"};
    return names[static_cast<int>(c)];
}

CameraMotion parse_camera(const std::string& s) {
    for (int i = 0; i < kNumCameraMotions; ++i) {
        if (camera_name(static_cast<CameraMotion>(i)) == s) return static_cast<CameraMotion>(i);
    }
    throw ValidationError("unknown camera motion '" + s + "'");
}

std::string kind_name(ObjectKind k) {
    static const char* names[] = {"sphere", "box", "cone"};
    return names[static_cast<int>(k)];
}

Projection project(const Vector3d& world, const Camera& cam) {
    const Vector3d c = cam.R * world + cam.t;
    if (!(c.z() > kNearPlane)) {
        throw ValidationError("project: point at depth " + std::to_string(c.z()) + " is not beyond the near plane");
    }
    return {cam.f * c.x() / c.z() + cam.cx, cam.f * c.y() / c.z() + cam.cy, c.z()};
}

Camera SceneSample::camera_at(int frame) const {
    if (frame < 0 || frame >= frames) {
        throw ValidationError("camera_at: frame out of range");
    }
    Camera cam;
    const float* e = cameras.data() + frame * 12;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.R(r, c) = e[r * 4 + c];
        cam.t(r) = e[r * 4 + 3];
    }
    cam.f = height;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    return cam;
}

SceneSpec random_scene(std::uint64_t seed, Action action, CameraMotion camera, int frames, int height,
                       int width, int max_objects) {
    if (max_objects < 2) {
        throw ValidationError("scenes need room for at least 2 objects");
    }
    Rng rng(derive_seed(seed, 17));
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.height = height;
    s.width = width;
    s.action = action;
    s.camera = camera;
    auto color = [&]() {
        // Saturated colour: one dominant channel, one mid, one low.
        std::array<double, 3> c{rng.uniform(0.1, 0.3), rng.uniform(0.3, 0.6), rng.uniform(0.75, 1.0)};
        for (int i = 2; i > 0; --i) std::swap(c[static_cast<std::size_t>(i)], c[rng.below(static_cast<std::uint64_t>(i + 1))]);
        return c;
    };
    const int n = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_objects - 1)));
    ObjectSpec primary;
    primary.kind = static_cast<ObjectKind>(rng.below(kNumKinds));
    primary.size = rng.uniform(0.55, 0.8);
    primary.yaw = rng.uniform(0.0, 2 * std::numbers::pi);
    primary.color = color();
    switch (action) {
        case Action::left_to_right:
        case Action::right_to_left: {
            const double sign = action == Action::left_to_right ? 1.0 : -1.0;
            primary.x = -1.4 * sign;
            primary.dx = 2.8 * sign;
            primary.z = rng.uniform(3.8, 4.8);
            break;
        }
        case Action::approach:
        case Action::recede: {
            const bool toward = action == Action::approach;
            primary.x = rng.uniform(-0.6, 0.6);
            primary.z = toward ? 5.6 : 3.0;
            primary.dz = toward ? -2.6 : 2.6;
            break;
        }
        case Action::rotate:
            primary.x = rng.uniform(-0.6, 0.6);
            primary.z = rng.uniform(3.5, 4.5);
            primary.dyaw = std::numbers::pi * rng.uniform(0.5, 1.0) * (rng.below(2) ? 1.0 : -1.0);
            break;
        case Action::still:
            primary.x = rng.uniform(-1.0, 1.0);
            primary.z = rng.uniform(3.5, 5.0);
            break;
    }
    s.objects.push_back(primary);
    for (int i = 1; i < n; ++i) {
        ObjectSpec o;
        o.kind = static_cast<ObjectKind>(rng.below(kNumKinds));
        o.size = rng.uniform(0.3, 0.55);
        o.x = rng.uniform(-2.0, 2.0);
        o.z = rng.uniform(3.0, 6.5);
        o.yaw = rng.uniform(0.0, 2 * std::numbers::pi);
        o.color = color();
        s.objects.push_back(o);
    }
    if (camera == CameraMotion::translate) {
        s.cam_shift_x = rng.uniform(0.3, 0.6) * (rng.below(2) ? 1.0 : -1.0);
        s.cam_shift_z = rng.uniform(-0.3, 0.3);
    } else if (camera == CameraMotion::orbit) {
        s.orbit_deg = rng.uniform(8.0, 15.0) * (rng.below(2) ? 1.0 : -1.0);
    }
    return s;
}

double raycast_depth(const SceneSpec& spec, int frame, double u, double v) {
    World w = make_world(spec);
    return cast(w, frame, w.camera_at(frame), u, v).depth;
}

SceneSample generate(const SceneSpec& spec) {
    if (spec.objects.empty()) {
        throw ValidationError("scene spec has no objects");
    }
    if (spec.frames < 1 || spec.height < 1 || spec.width < 1 || spec.num_tracks < 0) {
        throw ValidationError("scene spec has non-positive extents");
    }
    if (spec.objects.size() >= kBackground) {
        throw ValidationError("too many objects");
    }
    const World w = make_world(spec);
    const int F = spec.frames, H = spec.height, W = spec.width;
    SceneSample out;
    out.frames = F;
    out.height = H;
    out.width = W;
    out.video.resize(static_cast<std::size_t>(F) * H * W * 3);
    out.depth.resize(static_cast<std::size_t>(F) * H * W);
    out.segment.resize(static_cast<std::size_t>(F) * H * W);
    std::vector<Camera> cams;
    for (int f = 0; f < F; ++f) cams.push_back(w.camera_at(f));

    for (int f = 0; f < F; ++f) {
        const Camera& cam = cams[static_cast<std::size_t>(f)];
        const Vector3d origin = -cam.R.transpose() * cam.t;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double u = x + 0.5, v = y + 0.5;
                const Hit hit = cast(w, f, cam, u, v);
                const Vector3d dir = cam.R.transpose() * Vector3d((u - cam.cx) / cam.f, (v - cam.cy) / cam.f, 1.0);
                const auto col = shade(w, hit, origin + hit.depth * dir, dir);
                const std::size_t px = (static_cast<std::size_t>(f) * H + y) * W + x;
                for (int ch = 0; ch < 3; ++ch) out.video[px * 3 + ch] = to_u8(col[static_cast<std::size_t>(ch)]);
                out.depth[px] = static_cast<float>(hit.depth);
                out.segment[px] = hit.surface >= 0 ? static_cast<std::uint8_t>(hit.surface) : kBackground;
            }
        }
    }

    // Point tracks: half on objects (when any are visible), the rest anywhere.
    Rng rng(derive_seed(spec.seed, 29));
    std::vector<int> object_px, all_px;
    for (int i = 0; i < H * W; ++i) {
        all_px.push_back(i);
        if (out.segment[static_cast<std::size_t>(i)] != kBackground) object_px.push_back(i);
    }
    auto shuffle = [&](std::vector<int>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    };
    shuffle(object_px);
    shuffle(all_px);
    std::vector<int> chosen;
    std::vector<bool> taken(static_cast<std::size_t>(H * W), false);
    const int want_obj = std::min<int>(spec.num_tracks / 2, static_cast<int>(object_px.size()));
    for (int i = 0; i < want_obj; ++i) {
        chosen.push_back(object_px[static_cast<std::size_t>(i)]);
        taken[static_cast<std::size_t>(object_px[static_cast<std::size_t>(i)])] = true;
    }
    for (int p : all_px) {
        if (static_cast<int>(chosen.size()) >= spec.num_tracks) break;
        if (!taken[static_cast<std::size_t>(p)]) chosen.push_back(p);
    }
    out.num_tracks = static_cast<int>(chosen.size());
    out.track_pos.resize(static_cast<std::size_t>(out.num_tracks) * F * 2);
    out.track_vis.resize(static_cast<std::size_t>(out.num_tracks) * F);
    out.track_in.resize(static_cast<std::size_t>(out.num_tracks) * F);
    out.track_obj.resize(static_cast<std::size_t>(out.num_tracks));
    for (int k = 0; k < out.num_tracks; ++k) {
        const int p = chosen[static_cast<std::size_t>(k)];
        const double u0 = p % W + 0.5, v0 = p / W + 0.5;
        const Camera& cam0 = cams[0];
        const Hit h0 = cast(w, 0, cam0, u0, v0);
        const Vector3d origin = -cam0.R.transpose() * cam0.t;
        const Vector3d X0 = origin + h0.depth * (cam0.R.transpose() * Vector3d((u0 - cam0.cx) / cam0.f, (v0 - cam0.cy) / cam0.f, 1.0));
        Vector3d local = X0;
        if (h0.surface >= 0) {
            const ObjectState st = w.object_at(static_cast<std::size_t>(h0.surface), 0);
            local = st.rot.transpose() * (X0 - st.pos);
        }
        out.track_obj[static_cast<std::size_t>(k)] = static_cast<std::int16_t>(h0.surface >= 0 ? h0.surface : -1);
        for (int f = 0; f < F; ++f) {
            Vector3d Xf = local;
            if (h0.surface >= 0) {
                const ObjectState st = w.object_at(static_cast<std::size_t>(h0.surface), f);
                Xf = st.rot * local + st.pos;
            }
            const Camera& cam = cams[static_cast<std::size_t>(f)];
            const Vector3d c = cam.R * Xf + cam.t;
            const std::size_t idx = static_cast<std::size_t>(k) * F + f;
            if (f == 0) {
                out.track_pos[idx * 2] = static_cast<float>(u0);
                out.track_pos[idx * 2 + 1] = static_cast<float>(v0);
                out.track_in[idx] = 1;
                out.track_vis[idx] = 1;
                continue;
            }
            if (!(c.z() > kNearPlane)) {
                out.track_pos[idx * 2] = -1.0f;
                out.track_pos[idx * 2 + 1] = -1.0f;
                continue;
            }
            const double u = cam.f * c.x() / c.z() + cam.cx;
            const double v = cam.f * c.y() / c.z() + cam.cy;
            out.track_pos[idx * 2] = static_cast<float>(u);
            out.track_pos[idx * 2 + 1] = static_cast<float>(v);
            const bool inside = u >= 0.0 && u < W && v >= 0.0 && v < H;
            out.track_in[idx] = inside ? 1 : 0;
            if (inside) {
                const double d = cast(w, f, cam, u, v).depth;
                out.track_vis[idx] = std::abs(d - c.z()) <= 1e-6 * c.z() + 1e-9 ? 1 : 0;
            }
        }
    }

    // Amodal boxes from projected mesh vertices.
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        std::vector<float> b(static_cast<std::size_t>(F) * 4);
        for (int f = 0; f < F; ++f) {
            const ObjectState st = w.object_at(k, f);
            double umin = 1e300, vmin = 1e300, umax = -1e300, vmax = -1e300;
            bool behind = false;
            for (const auto& vert : w.meshes[k].verts) {
                const Vector3d c = cams[static_cast<std::size_t>(f)].R * (st.rot * vert + st.pos) + cams[static_cast<std::size_t>(f)].t;
                if (!(c.z() > kNearPlane)) {
                    behind = true;
                    break;
                }
                const Camera& cam = cams[static_cast<std::size_t>(f)];
                const double u = cam.f * c.x() / c.z() + cam.cx, v = cam.f * c.y() / c.z() + cam.cy;
                umin = std::min(umin, u);
                umax = std::max(umax, u);
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
            float* bb = b.data() + f * 4;
            if (behind) {
                bb[0] = 0.0f; bb[1] = 0.0f; bb[2] = 1.0f; bb[3] = 1.0f;
                continue;
            }
            bb[0] = static_cast<float>(std::clamp(umin / W, 0.0, 1.0));
            bb[1] = static_cast<float>(std::clamp(vmin / H, 0.0, 1.0));
            bb[2] = static_cast<float>(std::clamp(umax / W, 0.0, 1.0));
            bb[3] = static_cast<float>(std::clamp(vmax / H, 0.0, 1.0));
        }
        const double area0 = (static_cast<double>(b[2]) - b[0]) * (static_cast<double>(b[3]) - b[1]);
        if (area0 < kMinBoxArea || out.num_boxes >= kMaxBoxes) {
            continue;
        }
        out.boxes.insert(out.boxes.end(), b.begin(), b.end());
        out.box_obj.push_back(static_cast<std::uint16_t>(k));
        ++out.num_boxes;
    }

    // Relative pose first -> last camera: P = E_last * E_first^-1.
    const Camera& c0 = cams.front();
    const Camera& cl = cams.back();
    const Matrix3d R = cl.R * c0.R.transpose();
    const Vector3d t = cl.t - R * c0.t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out.pose[static_cast<std::size_t>(r * 4 + c)] = static_cast<float>(R(r, c));
        out.pose[static_cast<std::size_t>(r * 4 + 3)] = static_cast<float>(t(r));
    }
    out.cameras.resize(static_cast<std::size_t>(F) * 12);
    for (int f = 0; f < F; ++f) {
        const Camera& cam = cams[static_cast<std::size_t>(f)];
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out.cameras[static_cast<std::size_t>(f * 12 + r * 4 + c)] = static_cast<float>(cam.R(r, c));
            out.cameras[static_cast<std::size_t>(f * 12 + r * 4 + 3)] = static_cast<float>(cam.t(r));
        }
    }
    out.class_label = static_cast<std::uint16_t>(spec.objects[0].kind);
    out.action_label = static_cast<std::uint16_t>(spec.action);
    out.camera_label = static_cast<std::uint16_t>(spec.camera);
    out.num_objects = static_cast<std::uint16_t>(spec.objects.size());
    return out;
}

}  // namespace vdprobe::synth
