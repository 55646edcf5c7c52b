#include "vdprobe/backbone/train.hpp"

#include <sstream>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::backbone {

using nd::Tensor;

Trainer::Trainer(BackboneModel model, std::vector<Tensor> latents, TrainConfig cfg)
    : model_(std::move(model)), latents_(std::move(latents)), cfg_(cfg), optim_(cfg.adam), rng_(cfg.seed) {
    if (latents_.empty()) {
        throw ValidationError("training needs at least one clean latent");
    }
    if (cfg_.batch <= 0) {
        throw ValidationError("batch size must be positive");
    }
    if (cfg_.steps <= 0) {
        throw ValidationError("step count must be positive");
    }
    if (cfg_.schedule.total < cfg_.steps) {
        throw ValidationError("schedule total (" + std::to_string(cfg_.schedule.total) + ") is shorter than steps (" +
                              std::to_string(cfg_.steps) + ")");
    }
}

LossRecord Trainer::step() {
    const std::int64_t k = optim_.step_count();
    if (k >= cfg_.steps) {
        throw ValidationError("training already finished at step " + std::to_string(k));
    }
    std::vector<Tensor> batch;
    for (int i = 0; i < cfg_.batch; ++i) {
        batch.push_back(latents_[static_cast<std::size_t>(rng_.below(latents_.size()))]);
    }
    auto params = nd::param_tensors(model_.params());
    nd::Tape tape;
    LossRecord rec;
    std::vector<Tensor> grads;
    {
        nd::TapeScope scope(tape);
        Tensor loss = denoise_loss(model_, batch, rng_);
        rec.loss = loss.item();
        grads = nd::gradient_of(loss, params);
    }
    rec.step = k + 1;
    rec.lr = nd::lr_at_step(k, cfg_.schedule);
    optim_.step(params, grads, rec.lr);
    return rec;
}

void Trainer::save(const std::string& path) const {
    NamedTensors extra;
    for (auto& [n, t] : optim_.export_state()) extra.emplace_back("optim." + n, t);
    KeyValues kv = train_config_kv(cfg_);
    kv["train.step"] = std::to_string(optim_.step_count());
    kv["train.rng"] = rng_.state();
    save_checkpoint(model_, path, extra, kv);
}

Trainer Trainer::resume(const std::string& checkpoint, std::vector<Tensor> latents, TrainConfig cfg) {
    NamedTensors extra;
    KeyValues kv;
    BackboneModel model = load_checkpoint(checkpoint, std::nullopt, &extra, &kv);
    if (!kv.contains("train.step") || !kv.contains("train.rng")) {
        throw FormatError(checkpoint + ": not a training checkpoint (no optimizer state)");
    }
    Trainer tr(std::move(model), std::move(latents), cfg);
    std::vector<std::pair<std::string, Tensor>> state;
    for (auto& [n, t] : extra) {
        if (n.rfind("optim.", 0) == 0) state.emplace_back(n.substr(6), t);
    }
    tr.optim_.import_state(state, std::stoll(kv.at("train.step")));
    tr.rng_.set_state(kv.at("train.rng"));
    return tr;
}

std::vector<Tensor> tokenize_all(const BackboneModel& model, const std::vector<Tensor>& videos) {
    nd::NoGradScope no_grad;
    std::vector<Tensor> out;
    out.reserve(videos.size());
    for (const auto& v : videos) out.push_back(model.tokenize(v));
    return out;
}

KeyValues train_config_kv(const TrainConfig& cfg) {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {
        {"train.steps", std::to_string(cfg.steps)},
        {"train.batch", std::to_string(cfg.batch)},
        {"train.seed", std::to_string(cfg.seed)},
        {"train.beta1", num(cfg.adam.beta1)},
        {"train.beta2", num(cfg.adam.beta2)},
        {"train.weight_decay", num(cfg.adam.weight_decay)},
        {"train.lr_peak", num(cfg.schedule.peak)},
        {"train.lr_end", num(cfg.schedule.end)},
        {"train.warmup", std::to_string(cfg.schedule.warmup)},
    };
}

}  // namespace vdprobe::backbone
