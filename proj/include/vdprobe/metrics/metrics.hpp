#pragma once

#include <Eigen/Dense>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace vdprobe::metrics {

enum class Direction { higher_better, lower_better };
std::string direction_name(Direction d);
Direction parse_direction(const std::string& s);

// Corners of an axis-aligned cube, side 1, centred at (0, 0, 2) in the first
// camera's frame.
std::array<Eigen::Vector3d, 8> virtual_cube();

// Fraction of rows whose argmax equals the label; ties go to the lowest index.
double top1(std::span<const float> logits, std::size_t num_classes, std::span<const std::int64_t> labels);
std::size_t argmax(std::span<const float> row);

inline constexpr double kDepthFloor = 1e-3;
// Mean |pred - gt| / gt over pixels with gt > kDepthFloor.
double abs_rel_err(std::span<const float> pred, std::span<const float> gt);

// Pose as 3x4 [R|t] row-major.
using Pose = std::array<double, 12>;
Eigen::Vector3d apply_pose(const Pose& p, const Eigen::Vector3d& x);
double epe(const Pose& p_hat, const Pose& p);

struct TrackSet {
    int tracks = 0;
    int frames = 0;
    std::vector<float> pos;             // tracks*frames*2
    std::vector<std::uint8_t> visible;  // tracks*frames
};

// Query frame 0 is not scored. Thresholds are in the units of `pos`.
double average_jaccard(const TrackSet& pred, const TrackSet& gt, std::span<const double> thresholds);
double jaccard_at(const TrackSet& pred, const TrackSet& gt, double threshold);

using Box = std::array<double, 4>;  // xmin, ymin, xmax, ymax
double iou(const Box& a, const Box& b);
// boxes laid out [n, frames, 4]; frame 0 excluded.
double mean_iou(std::span<const float> pred, std::span<const float> gt, int boxes, int frames);

double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);
std::vector<double> average_ranks(std::span<const double> xs);

// Positive fraction means the video model is better.
double relative_change(double x_image, double x_video, Direction d);

}  // namespace vdprobe::metrics
