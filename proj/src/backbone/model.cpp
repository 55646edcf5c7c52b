#include "vdprobe/backbone/model.hpp"

#include <cmath>
#include <numbers>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::backbone {

using nd::Shape;
using nd::Tensor;

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::video: return "video";
        case Mode::image: return "image";
        case Mode::image_identity: return "image_identity";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    if (s == "video") return Mode::video;
    if (s == "image") return Mode::image;
    if (s == "image_identity") return Mode::image_identity;
    throw ValidationError("unknown mode '" + s + "' (expected video, image or image_identity)");
}

void BackboneConfig::validate() const {
    auto positive = [](std::int64_t v, const char* what) {
        if (v <= 0) throw ValidationError(std::string(what) + " must be positive");
    };
    positive(frames, "frames");
    positive(height, "height");
    positive(width, "width");
    positive(patch, "patch");
    positive(temporal_patch, "temporal_patch");
    positive(latent_channels, "latent_channels");
    positive(dim, "dim");
    positive(blocks, "blocks");
    positive(heads, "heads");
    positive(mlp_hidden, "mlp_hidden");
    positive(tile, "tile");
    if ((frames - 1) % temporal_patch != 0) {
        throw ValidationError("frames must be 1 + temporal_patch * m, got " + std::to_string(frames));
    }
    if (height % patch != 0 || width % patch != 0) {
        throw ValidationError("height/width must be multiples of the patch size");
    }
    if (blocks % 2 != 0) {
        throw ValidationError("blocks must be even, got " + std::to_string(blocks));
    }
    if (dim % heads != 0) {
        throw ValidationError("dim must be divisible by heads");
    }
    if (latent_h() % tile != 0 || latent_w() % tile != 0) {
        throw ValidationError("latent grid must be a multiple of the tile size");
    }
}

KeyValues BackboneConfig::to_kv() const {
    return {{"frames", std::to_string(frames)},
            {"height", std::to_string(height)},
            {"width", std::to_string(width)},
            {"patch", std::to_string(patch)},
            {"temporal_patch", std::to_string(temporal_patch)},
            {"latent_channels", std::to_string(latent_channels)},
            {"dim", std::to_string(dim)},
            {"blocks", std::to_string(blocks)},
            {"heads", std::to_string(heads)},
            {"mlp_hidden", std::to_string(mlp_hidden)},
            {"tile", std::to_string(tile)},
            {"mode", mode_name(mode)},
            {"seed", std::to_string(seed)}};
}

BackboneConfig BackboneConfig::from_kv(const KeyValues& kv) {
    BackboneConfig c;
    auto num = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            field = static_cast<std::remove_reference_t<decltype(field)>>(v);
        } catch (const std::exception&) {
            throw ValidationError(std::string("invalid integer for ") + key + ": '" + it->second + "'");
        }
    };
    num("frames", c.frames);
    num("height", c.height);
    num("width", c.width);
    num("patch", c.patch);
    num("temporal_patch", c.temporal_patch);
    num("latent_channels", c.latent_channels);
    num("dim", c.dim);
    num("blocks", c.blocks);
    num("heads", c.heads);
    num("mlp_hidden", c.mlp_hidden);
    num("tile", c.tile);
    num("seed", c.seed);
    if (auto it = kv.find("mode"); it != kv.end()) {
        c.mode = parse_mode(it->second);
    }
    c.validate();
    return c;
}

double alpha_at(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ValidationError("alpha_at: t=" + std::to_string(t) + " outside [0, 1]");
    }
    if (t == 0.0) return 1.0;
    if (t == 1.0) return 0.0;
    const double c = std::cos(std::numbers::pi * t / 2.0);
    return c * c;
}

double timestep_to_t(int step) {
    if (step < 0 || step > kTimeSteps) {
        throw ValidationError("noise timestep " + std::to_string(step) + " outside [0, " +
                              std::to_string(kTimeSteps) + "]");
    }
    return static_cast<double>(step) / kTimeSteps;
}

Tensor forward_noise(const Tensor& z0, double t, const Tensor& eps) {
    if (z0.shape() != eps.shape()) {
        throw ShapeError("forward_noise: z0 " + nd::shape_str(z0.shape()) + " vs eps " +
                         nd::shape_str(eps.shape()));
    }
    const double a = alpha_at(t);
    const float sa = static_cast<float>(std::sqrt(a));
    const float sn = static_cast<float>(std::sqrt(1.0 - a));
    auto zv = z0.to_f32();
    auto ev = eps.to_f32();
    std::vector<float> out(zv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = sa * zv[i] + sn * ev[i];
    }
    return Tensor::from_vector(z0.shape(), std::move(out));
}

bool window_allows(const BackboneConfig& cfg, Window w, std::int64_t q, std::int64_t k) {
    if (q == 0) {
        return k == 0;
    }
    if (k == 0) {
        return true;
    }
    const std::int64_t hw = cfg.tokens_per_frame();
    const std::int64_t fq = (q - 1) / hw, sq = (q - 1) % hw;
    const std::int64_t fk = (k - 1) / hw, sk = (k - 1) % hw;
    switch (w) {
        case Window::spatial:
            return fq == fk;
        case Window::spatiotemporal: {
            const std::int64_t lw = cfg.latent_w();
            const auto tile_of = [&](std::int64_t s) {
                return (s / lw / cfg.tile) * (lw / cfg.tile) + (s % lw) / cfg.tile;
            };
            return tile_of(sq) == tile_of(sk);
        }
        case Window::identity:
            return q == k;
    }
    return false;
}

Tensor timestep_embedding(const std::vector<double>& t, std::int64_t d) {
    const std::int64_t half = d / 2;
    std::vector<float> out(static_cast<std::size_t>(static_cast<std::int64_t>(t.size()) * d), 0.0f);
    for (std::size_t b = 0; b < t.size(); ++b) {
        const double x = t[b] * kTimeSteps;
        for (std::int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out[b * d + i] = static_cast<float>(std::sin(x * freq));
            out[b * d + half + i] = static_cast<float>(std::cos(x * freq));
        }
    }
    return Tensor::from_vector({static_cast<std::int64_t>(t.size()), d}, std::move(out));
}

BackboneModel::BackboneModel(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, 0));
    const std::int64_t pv = cfg_.patch * cfg_.patch * 3;
    const std::int64_t c = cfg_.latent_channels;
    const std::int64_t d = cfg_.dim;
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.blocks));

    tok_proj_ = Tensor::from_vector({pv, c}, rng.normal_vector(static_cast<std::size_t>(pv * c),
                                                               3.0 / std::sqrt(static_cast<double>(pv))));
    tok_bias_ = Tensor::from_vector({c}, rng.normal_vector(static_cast<std::size_t>(c), 0.2));

    embed_ = nd::Linear(rng, c, d);
    pos_ = nd::make_param(rng, {cfg_.tokens(), d}, 0.05);
    null_cond_ = nd::make_param(rng, {d}, 0.02);
    time_mlp_ = nd::Mlp(rng, d, d, d);
    for (std::int64_t l = 0; l < cfg_.blocks; ++l) {
        Block b{nd::LayerNorm(d), nd::CrossAttention(rng, d, d, d, d, cfg_.heads), nd::LayerNorm(d),
                nd::Mlp(rng, d, cfg_.mlp_hidden, d)};
        for (auto& v : b.attn.o.w.mutable_data<float>()) v *= static_cast<float>(resid);
        for (auto& v : b.mlp.fc2.w.mutable_data<float>()) v *= static_cast<float>(resid);
        blocks_.push_back(std::move(b));
    }
    out_ln_ = nd::LayerNorm(d);
    out_proj_ = nd::Linear(rng, d, c, 0.0);

    embed_.collect(params_, "embed");
    params_.emplace_back("pos", pos_);
    params_.emplace_back("null_cond", null_cond_);
    time_mlp_.collect(params_, "time_mlp");
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "block" + std::to_string(l + 1);
        blocks_[l].ln1.collect(params_, p + ".ln1");
        blocks_[l].attn.collect(params_, p + ".attn");
        blocks_[l].ln2.collect(params_, p + ".ln2");
        blocks_[l].mlp.collect(params_, p + ".mlp");
    }
    out_ln_.collect(params_, "out_ln");
    out_proj_.collect(params_, "out_proj");
    build_masks();
}

void BackboneModel::set_mode(Mode m) {
    cfg_.mode = m;
    build_masks();
}

void BackboneModel::build_masks() {
    const std::int64_t n = 1 + cfg_.tokens();
    masks_.clear();
    for (Window w : {Window::spatial, Window::spatiotemporal, Window::identity}) {
        masks_.emplace_back(n, n, [&](std::int64_t q, std::int64_t k) { return window_allows(cfg_, w, q, k); });
    }
    pos_index_.resize(static_cast<std::size_t>(cfg_.tokens()));
    const std::int64_t hw = cfg_.tokens_per_frame();
    for (std::int64_t i = 0; i < cfg_.tokens(); ++i) {
        // Image modes see every latent frame as frame 0 of a one-frame clip.
        const std::int64_t f = cfg_.mode == Mode::video ? i / hw : 0;
        pos_index_[static_cast<std::size_t>(i)] = f * hw + i % hw;
    }
}

Window BackboneModel::window_of(int block) const {
    if (block < 1 || block > cfg_.blocks) {
        throw ValidationError("block " + std::to_string(block) + " outside [1, " +
                              std::to_string(cfg_.blocks) + "]");
    }
    if (block % 2 == 0) {
        return Window::spatial;
    }
    switch (cfg_.mode) {
        case Mode::video: return Window::spatiotemporal;
        case Mode::image: return Window::spatial;
        case Mode::image_identity: return Window::identity;
    }
    return Window::spatial;
}

const nd::AttentionMask& BackboneModel::mask_of(int block) const {
    return masks_[static_cast<std::size_t>(window_of(block))];
}

nd::ParamList BackboneModel::all_tensors() const {
    nd::ParamList out;
    out.emplace_back("tokenizer.proj", tok_proj_);
    out.emplace_back("tokenizer.bias", tok_bias_);
    out.insert(out.end(), params_.begin(), params_.end());
    return out;
}

Tensor BackboneModel::tokenize(const Tensor& video) const {
    const Shape want{cfg_.frames, cfg_.height, cfg_.width, 3};
    if (video.shape() != want) {
        throw ShapeError("tokenize: video " + nd::shape_str(video.shape()) + ", expected " + nd::shape_str(want));
    }
    nd::NoGradScope off;
    const std::int64_t p = cfg_.patch;
    const std::int64_t tl = cfg_.latent_frames();
    const std::int64_t lh = cfg_.latent_h(), lw = cfg_.latent_w();
    const std::int64_t pv = p * p * 3;
    const std::int64_t frame_px = cfg_.height * cfg_.width * 3;
    auto src = video.to_f32();
    std::vector<float> rows(static_cast<std::size_t>(tl * lh * lw * pv));
    std::vector<float> frame(static_cast<std::size_t>(frame_px));
    for (std::int64_t k = 0; k < tl; ++k) {
        if (k == 0) {
            std::copy_n(src.begin(), frame_px, frame.begin());
        } else {
            const std::int64_t first = 1 + (k - 1) * cfg_.temporal_patch;
            for (std::int64_t i = 0; i < frame_px; ++i) {
                float s = 0.0f;
                for (std::int64_t f = 0; f < cfg_.temporal_patch; ++f) s += src[(first + f) * frame_px + i];
                frame[i] = s / static_cast<float>(cfg_.temporal_patch);
            }
        }
        for (std::int64_t py = 0; py < lh; ++py) {
            for (std::int64_t px = 0; px < lw; ++px) {
                float* row = rows.data() + ((k * lh + py) * lw + px) * pv;
                for (std::int64_t y = 0; y < p; ++y) {
                    for (std::int64_t x = 0; x < p; ++x) {
                        const std::int64_t pix = ((py * p + y) * cfg_.width + px * p + x) * 3;
                        for (int ch = 0; ch < 3; ++ch) *row++ = frame[pix + ch];
                    }
                }
            }
        }
    }
    Tensor patches = Tensor::from_vector({tl * lh * lw, pv}, std::move(rows));
    Tensor z = nd::add(nd::matmul(patches, tok_proj_), tok_bias_);
    return nd::reshape(z, {tl, lh * lw, cfg_.latent_channels});
}

Tensor BackboneModel::cond_tokens(const std::vector<double>& t) const {
    Tensor emb = time_mlp_(timestep_embedding(t, cfg_.dim));
    Tensor c = nd::add(emb, null_cond_);
    return nd::reshape(c, {static_cast<std::int64_t>(t.size()), 1, cfg_.dim});
}

DenoiseOutput BackboneModel::denoise_forward(const Tensor& z_t, const std::vector<double>& t,
                                             std::optional<int> capture, bool keep_all_blocks) const {
    const std::int64_t n = cfg_.tokens();
    const std::int64_t c = cfg_.latent_channels;
    if (z_t.rank() != 3 || z_t.dim(1) != n || z_t.dim(2) != c) {
        throw ShapeError("denoise_forward: z_t " + nd::shape_str(z_t.shape()) + ", expected [B, " +
                         std::to_string(n) + ", " + std::to_string(c) + "]");
    }
    const std::int64_t b = z_t.dim(0);
    if (static_cast<std::int64_t>(t.size()) != b) {
        throw ShapeError("denoise_forward: " + std::to_string(t.size()) + " timesteps for batch " +
                         std::to_string(b));
    }
    for (double v : t) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("denoise_forward: t outside [0, 1]");
    }
    if (capture && (*capture < 1 || *capture > cfg_.blocks)) {
        throw ValidationError("capture block " + std::to_string(*capture) + " outside valid range [1, " +
                              std::to_string(cfg_.blocks) + "]");
    }
    const Shape feat_shape{b, cfg_.latent_frames(), cfg_.tokens_per_frame(), cfg_.dim};
    Tensor x = nd::add(embed_(z_t), nd::embedding(pos_, pos_index_));
    std::vector<Tensor> seq{cond_tokens(t), x};
    Tensor h = nd::concat(seq, 1);
    DenoiseOutput out;
    for (int l = 1; l <= cfg_.blocks; ++l) {
        const Block& blk = blocks_[static_cast<std::size_t>(l - 1)];
        Tensor u = blk.ln1(h);
        h = nd::add(h, blk.attn(u, u, &mask_of(l)));
        h = nd::add(h, blk.mlp(blk.ln2(h)));
        if ((capture && *capture == l) || keep_all_blocks) {
            Tensor f = nd::reshape(nd::slice(h, 1, 1, n), feat_shape);
            if (capture && *capture == l) out.features = f;
            if (keep_all_blocks) out.per_block.push_back(f);
        }
    }
    out.eps_hat = nd::slice(out_proj_(out_ln_(h)), 1, 1, n);
    return out;
}

NoisyBatch make_noisy_batch(const std::vector<Tensor>& clean, Rng& rng) {
    if (clean.empty()) {
        throw ValidationError("denoising batch is empty");
    }
    const Shape s = clean[0].shape();
    const std::int64_t per = clean[0].numel();
    NoisyBatch nb;
    std::vector<float> zt, eps;
    zt.reserve(static_cast<std::size_t>(per) * clean.size());
    eps.reserve(zt.capacity());
    for (const auto& z0 : clean) {
        if (z0.shape() != s) {
            throw ShapeError("denoising batch has mixed latent shapes");
        }
        const double t = rng.uniform();
        Tensor e = Tensor::from_vector(s, rng.normal_vector(static_cast<std::size_t>(per)));
        Tensor z = forward_noise(z0, t, e);
        auto zv = z.data<float>();
        auto ev = e.data<float>();
        zt.insert(zt.end(), zv.begin(), zv.end());
        eps.insert(eps.end(), ev.begin(), ev.end());
        nb.t.push_back(t);
    }
    const std::int64_t b = static_cast<std::int64_t>(clean.size());
    const std::int64_t c = s.back();
    nb.z_t = Tensor::from_vector({b, per / c, c}, std::move(zt));
    nb.eps = Tensor::from_vector({b, per / c, c}, std::move(eps));
    return nb;
}

Tensor denoise_loss(const Denoiser& f, const std::vector<Tensor>& clean, Rng& rng) {
    NoisyBatch nb = make_noisy_batch(clean, rng);
    return nd::mse(f(nb), nb.eps);
}

Tensor denoise_loss(const BackboneModel& model, const std::vector<Tensor>& clean, Rng& rng) {
    return denoise_loss([&](const NoisyBatch& nb) { return model.denoise_forward(nb.z_t, nb.t).eps_hat; },
                        clean, rng);
}

void save_checkpoint(const BackboneModel& model, const std::string& path, const NamedTensors& extra,
                     const KeyValues& extra_config) {
    NamedTensors tensors;
    for (const auto& [n, t] : model.all_tensors()) tensors.emplace_back(n, t);
    tensors.insert(tensors.end(), extra.begin(), extra.end());
    KeyValues cfg;
    for (const auto& [k, v] : model.config().to_kv()) cfg["backbone." + k] = v;
    for (const auto& [k, v] : extra_config) cfg[k] = v;
    write_tensor_file(path, tensors, cfg);
}

BackboneModel load_checkpoint(const std::string& path, std::optional<Mode> requested) {
    return load_checkpoint(path, requested, nullptr, nullptr);
}

BackboneModel load_checkpoint(const std::string& path, std::optional<Mode> requested, NamedTensors* extra,
                              KeyValues* extra_config) {
    TensorFile tf = read_tensor_file(path);
    KeyValues bcfg;
    for (const auto& [k, v] : tf.config) {
        if (k.rfind("backbone.", 0) == 0) {
            bcfg[k.substr(9)] = v;
        } else if (extra_config) {
            (*extra_config)[k] = v;
        }
    }
    BackboneConfig cfg = BackboneConfig::from_kv(bcfg);
    if (requested) cfg.mode = *requested;
    BackboneModel model(cfg);
    nd::ParamList slots = model.all_tensors();
    std::vector<bool> filled(slots.size(), false);
    for (const auto& [name, t] : tf.tensors) {
        if (name.rfind("optim.", 0) == 0 || name.rfind("readout.", 0) == 0) {
            if (extra) extra->emplace_back(name, t);
            continue;
        }
        std::size_t i = 0;
        while (i < slots.size() && slots[i].first != name) ++i;
        if (i == slots.size()) {
            throw FormatError(path + ": unknown tensor name '" + name + "'");
        }
        if (slots[i].second.shape() != t.shape()) {
            throw FormatError(path + ": tensor '" + name + "' has shape " + nd::shape_str(t.shape()) +
                              ", model expects " + nd::shape_str(slots[i].second.shape()));
        }
        auto src = t.data<float>();
        auto dst = slots[i].second.mutable_data<float>();
        std::copy(src.begin(), src.end(), dst.begin());
        filled[i] = true;
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!filled[i]) {
            throw FormatError(path + ": missing tensor '" + slots[i].first + "'");
        }
    }
    return model;
}

}  // namespace vdprobe::backbone
