#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vdprobe/backbone/model.hpp"

namespace vdprobe::backbone {

struct TrainConfig {
    std::int64_t steps = 2000;
    int batch = 2;
    std::uint64_t seed = 0;
    nd::AdamWConfig adam{};
    // Toy backbones train for thousands rather than hundreds of thousands of
    // steps, so warmup and peak are scaled accordingly.
    nd::WarmupCosine schedule{0.0, 1e-3, 1e-7, 100, 2000};
};

struct LossRecord {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

// Denoising pre-training on a fixed pool of clean latents. Owns the model, the
// optimizer and the batch RNG, all of which go into checkpoints.
class Trainer {
 public:
    Trainer(BackboneModel model, std::vector<nd::Tensor> latents, TrainConfig cfg);

    // Restores model, optimizer moments, step counter and RNG state.
    static Trainer resume(const std::string& checkpoint, std::vector<nd::Tensor> latents, TrainConfig cfg);

    LossRecord step();
    std::int64_t step_count() const { return optim_.step_count(); }
    const BackboneModel& model() const { return model_; }
    BackboneModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }

    void save(const std::string& path) const;

 private:
    BackboneModel model_;
    std::vector<nd::Tensor> latents_;
    TrainConfig cfg_;
    nd::AdamW optim_;
    Rng rng_;
};

// Tokenizes every video once; the tokenizer is fixed so this is exact.
std::vector<nd::Tensor> tokenize_all(const BackboneModel& model, const std::vector<nd::Tensor>& videos);

KeyValues train_config_kv(const TrainConfig& cfg);

}  // namespace vdprobe::backbone
