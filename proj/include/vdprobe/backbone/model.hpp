#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vdprobe/backbone/checkpoint.hpp"
#include "vdprobe/ndgrad/nn.hpp"

namespace vdprobe::backbone {

// image_identity is the identity-mask variant: spatio-temporal blocks let each
// latent attend only to itself.
enum class Mode { video, image, image_identity };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

enum class Window { spatial, spatiotemporal, identity };

struct BackboneConfig {
    std::int64_t frames = 9;
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t patch = 8;
    std::int64_t temporal_patch = 4;
    std::int64_t latent_channels = 32;
    std::int64_t dim = 128;
    std::int64_t blocks = 12;
    int heads = 4;
    std::int64_t mlp_hidden = 512;
    // Side of the square spatial tile used by spatio-temporal windows.
    std::int64_t tile = 4;
    Mode mode = Mode::video;
    std::uint64_t seed = 0;

    void validate() const;
    std::int64_t latent_frames() const { return 1 + (frames - 1) / temporal_patch; }
    std::int64_t latent_h() const { return height / patch; }
    std::int64_t latent_w() const { return width / patch; }
    std::int64_t tokens_per_frame() const { return latent_h() * latent_w(); }
    std::int64_t tokens() const { return latent_frames() * tokens_per_frame(); }

    KeyValues to_kv() const;
    static BackboneConfig from_kv(const KeyValues& kv);
};

// Noise schedule alpha(t) = cos^2(pi t / 2) on t in [0, 1].
inline constexpr int kTimeSteps = 1000;
double alpha_at(double t);
// Discrete timestep in [0, kTimeSteps] -> continuous t.
double timestep_to_t(int step);

// z_t = sqrt(alpha(t)) z0 + sqrt(1 - alpha(t)) eps.
nd::Tensor forward_noise(const nd::Tensor& z0, double t, const nd::Tensor& eps);

struct DenoiseOutput {
    nd::Tensor eps_hat;                 // [B, N, c]
    nd::Tensor features;                // [B, T_lat, hw, d] when captured
    std::vector<nd::Tensor> per_block;  // [B, T_lat, hw, d] for blocks 1..L when requested
};

class BackboneModel {
 public:
    explicit BackboneModel(const BackboneConfig& cfg);

    const BackboneConfig& config() const { return cfg_; }
    Mode mode() const { return cfg_.mode; }
    // Mode switches only the attention windows; parameters are shared.
    void set_mode(Mode m);

    Window window_of(int block) const;
    const nd::AttentionMask& mask_of(int block) const;

    // video [frames, H, W, 3] floats -> latents [T_lat, hw, c]. Fixed (never
    // trained) and deterministic.
    nd::Tensor tokenize(const nd::Tensor& video) const;

    // z_t [B, N, c], one t per batch item. capture in [1, L].
    DenoiseOutput denoise_forward(const nd::Tensor& z_t, const std::vector<double>& t,
                                  std::optional<int> capture = std::nullopt,
                                  bool keep_all_blocks = false) const;

    // Trainable parameters (tokenizer excluded).
    const nd::ParamList& params() const { return params_; }
    // Everything that is saved: tokenizer + trainable parameters.
    nd::ParamList all_tensors() const;
    std::int64_t parameter_count() const { return nd::param_count(params_); }

 private:
    struct Block {
        nd::LayerNorm ln1;
        nd::CrossAttention attn;
        nd::LayerNorm ln2;
        nd::Mlp mlp;
    };

    void build_masks();
    nd::Tensor cond_tokens(const std::vector<double>& t) const;

    BackboneConfig cfg_;
    nd::Tensor tok_proj_;  // [p*p*3, c]
    nd::Tensor tok_bias_;  // [c]
    nd::Linear embed_;
    nd::Tensor pos_;       // [T_lat * hw, d]
    nd::Tensor null_cond_; // [d]
    nd::Mlp time_mlp_;
    std::vector<Block> blocks_;
    nd::LayerNorm out_ln_;
    nd::Linear out_proj_;
    nd::ParamList params_;
    std::vector<nd::AttentionMask> masks_;  // per window kind
    std::vector<std::int64_t> pos_index_;
};

// Allowed-key predicate of a window over the sequence [cond, tokens...].
bool window_allows(const BackboneConfig& cfg, Window w, std::int64_t query, std::int64_t key);

// Sinusoidal embedding of t scaled to the timestep domain, width d.
nd::Tensor timestep_embedding(const std::vector<double>& t, std::int64_t d);

// Denoising batch: per-sample t ~ U[0,1] and eps ~ N(0, I).
struct NoisyBatch {
    nd::Tensor z_t;   // [B, N, c]
    nd::Tensor eps;   // [B, N, c]
    std::vector<double> t;
};
NoisyBatch make_noisy_batch(const std::vector<nd::Tensor>& clean, Rng& rng);

using Denoiser = std::function<nd::Tensor(const NoisyBatch&)>;
// Mean squared error between eps and the prediction.
nd::Tensor denoise_loss(const Denoiser& f, const std::vector<nd::Tensor>& clean, Rng& rng);
nd::Tensor denoise_loss(const BackboneModel& model, const std::vector<nd::Tensor>& clean, Rng& rng);

void save_checkpoint(const BackboneModel& model, const std::string& path,
                     const NamedTensors& extra = {}, const KeyValues& extra_config = {});
// Shapes come from the file; mode from `requested` when given.
BackboneModel load_checkpoint(const std::string& path, std::optional<Mode> requested = std::nullopt);
// Same, returning extra tensors/config entries stored alongside the model.
BackboneModel load_checkpoint(const std::string& path, std::optional<Mode> requested,
                              NamedTensors* extra, KeyValues* extra_config);

}  // namespace vdprobe::backbone
