#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vdprobe/backbone/checkpoint.hpp"
#include "vdprobe/metrics/metrics.hpp"
#include "vdprobe/ndgrad/nn.hpp"

namespace vdprobe::readouts {

// coords [..., k] in [0, 1] -> [..., k * 2 * freqs]: sin(2^j pi c) for every
// (coordinate, frequency), then the matching cosines.
nd::Tensor fourier_encode(const nd::Tensor& coords, int freqs);

// Per batch item, tokens sorted by their bit patterns so attention pooling is
// bitwise independent of input order.
nd::Tensor canonical_order(const nd::Tensor& tokens);

struct AttentiveHeadConfig {
    std::int64_t in = 128;
    std::int64_t width = 128;
    int heads = 4;
    std::int64_t mlp_hidden = 512;
    std::int64_t outputs = 10;
};

// Learned query cross-attends the tokens; the result is added to the query,
// refined by a residual GeLU MLP, normalized and classified.
struct AttentiveHead {
    AttentiveHeadConfig cfg;
    nd::Tensor query;  // [1, 1, in]
    nd::CrossAttention attn;
    nd::Mlp mlp;
    nd::LayerNorm ln;
    nd::Linear cls;

    AttentiveHead() = default;
    AttentiveHead(Rng& rng, const AttentiveHeadConfig& cfg);

    // tokens [B, N, in] -> attention output [B, 1, in].
    nd::Tensor pool(const nd::Tensor& tokens) const;
    // tokens [B, N, in] -> [B, outputs].
    nd::Tensor forward(const nd::Tensor& tokens) const;
    void collect(nd::ParamList& out, const std::string& prefix) const;
};

struct Classification {
    nd::Tensor logits;  // [B, classes]
    std::optional<nd::Tensor> loss;
};

Classification attentive_classify(const AttentiveHead& head, const nd::Tensor& tokens,
                                  std::span<const std::int64_t> labels = {});

struct DepthHeadConfig {
    std::int64_t in = 128;
    std::int64_t width = 128;
    int heads = 4;
    std::int64_t mlp_hidden = 512;
    int layers = 2;
    int freqs = 8;
    double init_depth = 0.0;
};

// Each query pixel is decoded on its own: queries cross-attend the frame's
// tokens and never each other.
struct DepthHead {
    struct Layer {
        nd::LayerNorm ln1;
        nd::CrossAttention attn;
        nd::LayerNorm ln2;
        nd::Mlp mlp;
    };
    DepthHeadConfig cfg;
    nd::Linear embed;
    std::vector<Layer> layers;
    nd::LayerNorm out_ln;
    nd::Mlp out;

    DepthHead() = default;
    DepthHead(Rng& rng, const DepthHeadConfig& cfg);

    // tokens [B, N, in], queries [B, Q, 2] in [0, 1]^2 (x, y) -> depth [B, Q].
    nd::Tensor forward(const nd::Tensor& tokens, const nd::Tensor& queries) const;
    void collect(nd::ParamList& out, const std::string& prefix) const;
};

struct DepthDecode {
    nd::Tensor depth;  // [B, Q]
    std::optional<nd::Tensor> loss;
};

// Throws ValidationError for queries outside the unit square.
DepthDecode depth_decode(const DepthHead& head, const nd::Tensor& tokens, const nd::Tensor& queries,
                         const nd::Tensor* target = nullptr);

// Bilinear upsampling of a [h, w] map sampled at cell centres to [H, W].
std::vector<float> upsample_bilinear(std::span<const float> grid, int h, int w, int out_h, int out_w);
// Normalized centres of an h x w grid as [h*w, 2] (x, y), row-major.
std::vector<float> grid_queries(int h, int w);

struct ProcrustesResult {
    Eigen::Matrix3d R;
    // Two equal smallest singular values with a reflection: any rotation in a
    // one-parameter family is a minimizer.
    bool non_unique = false;
};

ProcrustesResult procrustes_project(const Eigen::Matrix3d& m);

// Attentive readout over first and last latent frames joined channel-wise,
// 12 outputs read as [R|t] row-major. Starts at the identity pose.
struct PoseHead {
    AttentiveHead head;

    PoseHead() = default;
    PoseHead(Rng& rng, std::int64_t feature_dim, std::int64_t width, int heads, std::int64_t mlp_hidden);

    // first/last [B, hw, d] -> [B, 12].
    nd::Tensor forward(const nd::Tensor& first, const nd::Tensor& last) const;
    void collect(nd::ParamList& out, const std::string& prefix) const;
};

struct PoseForward {
    nd::Tensor raw;                    // [B, 12]
    std::vector<metrics::Pose> poses;  // rotation part projected to SO(3)
    std::optional<nd::Tensor> loss;
};

PoseForward pose_forward(const PoseHead& head, const nd::Tensor& first, const nd::Tensor& last,
                         const nd::Tensor* target = nullptr);
metrics::Pose project_pose(std::span<const double> raw12);

enum class TrackTask { point, box };

struct TrackerConfig {
    TrackTask task = TrackTask::point;
    std::int64_t feature_dim = 128;
    std::int64_t state = 128;
    int heads = 4;
    std::int64_t mlp_hidden = 512;
    int corrector_layers = 2;
    int freqs = 8;
    // Token grid of the features, for their positional encoding.
    int grid_h = 8;
    int grid_w = 8;
};

struct TrackState {
    nd::Tensor state;  // [B, K, S]
    nd::Tensor query;  // [B, K, q] query coordinates the outputs are offsets from
    int next_frame = 0;
};

struct TrackStepOutput {
    TrackState state;
    // [B, K, 4]. points: (x, y) in latent pixels, visibility logit, certainty
    // logit. boxes: normalized xmin, ymin, xmax, ymax.
    nd::Tensor out;
};

// Predictor MLP advances the state, a cross-attention corrector reads one
// frame's tokens, an output MLP emits the targets.
struct Tracker {
    struct Layer {
        nd::LayerNorm ln1;
        nd::CrossAttention attn;
        nd::LayerNorm ln2;
        nd::Mlp mlp;
    };
    TrackerConfig cfg;
    nd::Mlp init;
    nd::LayerNorm pred_ln;
    nd::Mlp predictor;
    nd::Linear token_pe;
    std::vector<Layer> corrector;
    nd::LayerNorm out_ln;
    nd::Mlp head;

    Tracker() = default;
    Tracker(Rng& rng, const TrackerConfig& cfg);

    // points: query [B, K, 2] in latent pixels; boxes: [B, K, 4] normalized.
    TrackState init_state(const nd::Tensor& query) const;
    nd::Tensor predict(const nd::Tensor& state) const;
    nd::Tensor correct(const nd::Tensor& state, const nd::Tensor& tokens) const;
    void collect(nd::ParamList& out, const std::string& prefix) const;
};

// tokens [B, N, d] of frame `frame`; must equal prev.next_frame.
TrackStepOutput track_step(const Tracker& tracker, const TrackState& prev, const nd::Tensor& tokens, int frame);

// frames[f] is [B, N, d]. Returns [B, K, F, 4].
nd::Tensor track_rollout(const Tracker& tracker, const nd::Tensor& query, const std::vector<nd::Tensor>& frames);

bool point_visibility_decision(double vis_logit, double certainty_logit);

// Certainty target: predicted position within this many latent pixels.
inline constexpr double kCertaintyRadius = 4.0;

struct TrackTargets {
    nd::Tensor pos;       // points [B, K, F, 2] latent px; boxes [B, K, F, 4]
    nd::Tensor visible;   // points [B, K, F]
    nd::Tensor in_scene;  // points [B, K, F]
};

nd::Tensor tracking_loss(const nd::Tensor& pred, const TrackTargets& gt, TrackTask task);

// Readout checkpoints share the backbone file format; names get "readout.".
void save_readout(const std::string& path, const nd::ParamList& params, const KeyValues& config);
// Copies stored values into `params` (names and shapes must match).
KeyValues load_readout(const std::string& path, nd::ParamList& params);

struct FitConfig {
    std::int64_t steps = 1000;
    std::uint64_t seed = 0;
    nd::AdamWConfig adam{};
    nd::WarmupCosine schedule{};
};

// Minimizes loss(rng) over `params` with AdamW; the loss closure draws its own
// minibatch. Returns the loss per step.
std::vector<double> fit(const nd::ParamList& params, const std::function<nd::Tensor(Rng&)>& loss, const FitConfig& cfg);

}  // namespace vdprobe::readouts
