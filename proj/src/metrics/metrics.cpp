#include "vdprobe/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vdprobe/error.hpp"

namespace vdprobe::metrics {

std::string direction_name(Direction d) {
    return d == Direction::higher_better ? "higher_better" : "lower_better";
}

Direction parse_direction(const std::string& s) {
    if (s == "higher_better") return Direction::higher_better;
    if (s == "lower_better") return Direction::lower_better;
    throw ValidationError("unknown metric direction '" + s + "'");
}

std::array<Eigen::Vector3d, 8> virtual_cube() {
    std::array<Eigen::Vector3d, 8> c;
    for (int i = 0; i < 8; ++i) {
        c[static_cast<std::size_t>(i)] =
            Eigen::Vector3d(i & 1 ? 0.5 : -0.5, i & 2 ? 0.5 : -0.5, 2.0 + (i & 4 ? 0.5 : -0.5));
    }
    return c;
}

std::size_t argmax(std::span<const float> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

double top1(std::span<const float> logits, std::size_t num_classes, std::span<const std::int64_t> labels) {
    if (labels.empty() || num_classes == 0) {
        throw ValidationError("top1: empty input");
    }
    if (logits.size() != labels.size() * num_classes) {
        throw ShapeError("top1: " + std::to_string(logits.size()) + " logits for " + std::to_string(labels.size()) +
                         " labels x " + std::to_string(num_classes) + " classes");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (static_cast<std::int64_t>(argmax(logits.subspan(i * num_classes, num_classes))) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double abs_rel_err(std::span<const float> pred, std::span<const float> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("abs_rel_err: length mismatch");
    }
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] > kDepthFloor) {
            total += std::abs(static_cast<double>(pred[i]) - gt[i]) / gt[i];
            ++n;
        }
    }
    if (n == 0) {
        throw ValidationError("abs_rel_err: no valid pixels");
    }
    return total / static_cast<double>(n);
}

Eigen::Vector3d apply_pose(const Pose& p, const Eigen::Vector3d& x) {
    Eigen::Vector3d y;
    for (int r = 0; r < 3; ++r) {
        y(r) = p[static_cast<std::size_t>(r * 4)] * x(0) + p[static_cast<std::size_t>(r * 4 + 1)] * x(1) +
               p[static_cast<std::size_t>(r * 4 + 2)] * x(2) + p[static_cast<std::size_t>(r * 4 + 3)];
    }
    return y;
}

double epe(const Pose& p_hat, const Pose& p) {
    for (double v : p_hat) {
        if (!std::isfinite(v)) throw ValidationError("epe: non-finite pose");
    }
    double total = 0.0;
    for (const auto& y : virtual_cube()) {
        total += (apply_pose(p, y) - apply_pose(p_hat, y)).norm();
    }
    return total / 8.0;
}

namespace {
void check_tracks(const TrackSet& pred, const TrackSet& gt) {
    if (gt.tracks == 0 || gt.frames == 0) {
        throw ValidationError("average_jaccard: empty track set");
    }
    if (pred.tracks != gt.tracks || pred.frames != gt.frames ||
        pred.pos.size() != static_cast<std::size_t>(gt.tracks) * gt.frames * 2 ||
        gt.pos.size() != pred.pos.size() || pred.visible.size() != gt.visible.size() ||
        gt.visible.size() != static_cast<std::size_t>(gt.tracks) * gt.frames) {
        throw ShapeError("average_jaccard: prediction and ground truth are not aligned");
    }
}
}  // namespace

double jaccard_at(const TrackSet& pred, const TrackSet& gt, double threshold) {
    check_tracks(pred, gt);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (int k = 0; k < gt.tracks; ++k) {
        for (int f = 1; f < gt.frames; ++f) {
            const std::size_t i = static_cast<std::size_t>(k) * gt.frames + f;
            const double du = pred.pos[2 * i] - gt.pos[2 * i];
            const double dv = pred.pos[2 * i + 1] - gt.pos[2 * i + 1];
            const bool close = std::sqrt(du * du + dv * dv) < threshold;
            const bool pv = pred.visible[i] != 0;
            const bool gv = gt.visible[i] != 0;
            if (pv && gv && close) ++tp;
            if (pv && (!gv || !close)) ++fp;
            if (gv && (!pv || !close)) ++fn;
        }
    }
    const std::size_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

double average_jaccard(const TrackSet& pred, const TrackSet& gt, std::span<const double> thresholds) {
    if (thresholds.empty()) {
        throw ValidationError("average_jaccard: no thresholds");
    }
    double total = 0.0;
    for (double t : thresholds) total += jaccard_at(pred, gt, t);
    return total / static_cast<double>(thresholds.size());
}

double iou(const Box& a, const Box& b) {
    for (const Box* x : {&a, &b}) {
        if ((*x)[0] > (*x)[2] || (*x)[1] > (*x)[3]) throw ValidationError("iou: malformed box (min > max)");
    }
    const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    const double inter = iw * ih;
    const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    return uni <= 0.0 ? (inter > 0.0 ? 1.0 : (a == b ? 1.0 : 0.0)) : inter / uni;
}

double mean_iou(std::span<const float> pred, std::span<const float> gt, int boxes, int frames) {
    const auto n = static_cast<std::size_t>(boxes) * static_cast<std::size_t>(frames) * 4;
    if (pred.size() != n || gt.size() != n) {
        throw ShapeError("mean_iou: boxes not aligned");
    }
    if (boxes == 0 || frames < 2) {
        throw ValidationError("mean_iou: nothing to score");
    }
    double total = 0.0;
    for (int b = 0; b < boxes; ++b) {
        for (int f = 1; f < frames; ++f) {
            const std::size_t o = (static_cast<std::size_t>(b) * frames + f) * 4;
            // Predicted boxes are re-ordered so they are always well formed.
            Box p{std::min(pred[o], pred[o + 2]), std::min(pred[o + 1], pred[o + 3]), std::max(pred[o], pred[o + 2]),
                  std::max(pred[o + 1], pred[o + 3])};
            Box g{gt[o], gt[o + 1], gt[o + 2], gt[o + 3]};
            total += iou(p, g);
        }
    }
    return total / (static_cast<double>(boxes) * (frames - 1));
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw ValidationError("pearson: need two equal-length series of length >= 2");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw ValidationError("pearson: zero variance");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw ValidationError("spearman: need two equal-length series of length >= 2");
    }
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    return pearson(rx, ry);
}

double relative_change(double x_image, double x_video, Direction d) {
    if (x_image == 0.0) {
        throw ValidationError("relative_change: image-model value is zero");
    }
    return d == Direction::higher_better ? (x_video - x_image) / x_image : (x_image - x_video) / x_image;
}

}  // namespace vdprobe::metrics
