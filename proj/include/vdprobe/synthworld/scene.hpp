#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vdprobe::synth {

enum class ObjectKind : std::uint8_t { sphere = 0, box = 1, cone = 2 };
inline constexpr int kNumKinds = 3;

enum class Action : std::uint8_t { left_to_right = 0, right_to_left, approach, recede, rotate, still };
inline constexpr int kNumActions = 6;

enum class CameraMotion : std::uint8_t { fixed = 0, translate, orbit };
inline constexpr int kNumCameraMotions = 3;

std::string action_name(Action a);
Action parse_action(const std::string& s);
std::string camera_name(CameraMotion c);
CameraMotion parse_camera(const std::string& s);
std::string kind_name(ObjectKind k);

// Pinhole camera: x_cam = R x_world + t; u = f x/z + cx, v = f y/z + cy.
// Axes: x right, y down, z forward.
struct Camera {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double f = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

inline constexpr double kNearPlane = 0.1;

struct Projection {
    double u;
    double v;
    double depth;
};

// Throws ValidationError when the point is not beyond the near plane.
Projection project(const Eigen::Vector3d& world, const Camera& cam);

struct ObjectSpec {
    ObjectKind kind = ObjectKind::sphere;
    double size = 0.5;   // bounding radius scale
    double x = 0.0;      // ground position at frame 0
    double z = 4.0;
    double yaw = 0.0;
    // Total displacement / rotation over the clip, applied linearly in time.
    double dx = 0.0;
    double dz = 0.0;
    double dyaw = 0.0;
    std::array<double, 3> color{0.8, 0.2, 0.2};
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int frames = 9;
    int height = 64;
    int width = 64;
    int num_tracks = 64;
    Action action = Action::still;
    CameraMotion camera = CameraMotion::fixed;
    // Camera path parameters over the clip (translate: shift; orbit: degrees
    // around a pivot in front of the first camera).
    double cam_shift_x = 0.0;
    double cam_shift_z = 0.0;
    double orbit_deg = 0.0;
    // objects[0] performs the action; its kind is the class label.
    std::vector<ObjectSpec> objects;
};

// Draws object layout for a given seed / action / camera. 2 to `max_objects`
// objects.
SceneSpec random_scene(std::uint64_t seed, Action action, CameraMotion camera, int frames, int height,
                       int width, int max_objects = 6);

struct SceneSample {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> video;   // frames*H*W*3
    std::vector<float> depth;          // frames*H*W, camera-space z
    std::vector<std::uint8_t> segment; // frames*H*W, object index or kBackground
    int num_tracks = 0;
    std::vector<float> track_pos;          // tracks*frames*2 pixel (u, v)
    std::vector<std::uint8_t> track_vis;   // tracks*frames
    std::vector<std::uint8_t> track_in;    // tracks*frames (in scene)
    std::vector<std::int16_t> track_obj;   // tracks; -1 for background
    int num_boxes = 0;
    std::vector<float> boxes;              // boxes*frames*4 normalized xmin,ymin,xmax,ymax
    std::vector<std::uint16_t> box_obj;    // boxes
    std::array<float, 12> pose{};          // [R|t] row-major, first -> last camera
    std::vector<float> cameras;            // frames*12 world->camera [R|t]
    std::uint16_t class_label = 0;
    std::uint16_t action_label = 0;
    std::uint16_t camera_label = 0;
    std::uint16_t num_objects = 0;

    bool operator==(const SceneSample&) const = default;
    Camera camera_at(int frame) const;
};

inline constexpr std::uint8_t kBackground = 255;
// Boxes whose frame-0 area is below this fraction of the frame are dropped.
inline constexpr double kMinBoxArea = 0.005;
inline constexpr int kMaxBoxes = 25;

SceneSample generate(const SceneSpec& spec);

// Depth of the first surface hit through continuous pixel coordinates (u, v)
// at `frame`; used for visibility labels.
double raycast_depth(const SceneSpec& spec, int frame, double u, double v);

}  // namespace vdprobe::synth
