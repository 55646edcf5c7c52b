#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vdprobe/experiment/config.hpp"

namespace vdprobe::experiment {

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

// Trailing ceil(holdout * count) samples are the test set.
Split split_indices(int count, double holdout);

// Probe features per sample, computed on first use. Sample i is noised with
// seed derive_seed(spec.seed, i).
class FeatureBank {
 public:
    FeatureBank(const backbone::BackboneModel& model, const std::vector<synth::SceneSample>& samples,
                const probe::ProbeSpec& spec);

    // [T_lat, hw, d] from the clip.
    const nd::Tensor& video(int i) const;
    // [T_lat, hw, d] from frame 0 repeated.
    const nd::Tensor& still(int i) const;
    const probe::ProbeSpec& spec() const { return spec_; }
    const backbone::BackboneConfig& backbone() const { return model_.config(); }
    int size() const { return static_cast<int>(samples_.size()); }

 private:
    const backbone::BackboneModel& model_;
    const std::vector<synth::SceneSample>& samples_;
    probe::ProbeSpec spec_;
    mutable std::vector<std::optional<nd::Tensor>> video_;
    mutable std::vector<std::optional<nd::Tensor>> still_;
};

struct ReadoutRun {
    Task task = Task::point;
    double value = 0.0;
    std::vector<double> losses;
    nd::ParamList params;
    KeyValues config;
};

struct ReadoutOptions {
    readouts::FitConfig fit;
    int batch = 4;
    std::uint64_t seed = 0;
    // Classes for the action task in label order; labels are remapped to
    // positions in this list.
    std::vector<synth::Action> actions;
};

ReadoutOptions readout_options(const ExperimentConfig& cfg, std::uint64_t seed);

// Trains the task head on the train split and evaluates it on the test split.
ReadoutRun run_readout(Task task, const FeatureBank& bank, const std::vector<synth::SceneSample>& samples,
                       const Split& split, const ReadoutOptions& opts);

// Evaluates already-trained parameters (e.g. loaded from a readout checkpoint).
double evaluate_readout(Task task, const FeatureBank& bank, const std::vector<synth::SceneSample>& samples,
                        const std::vector<int>& indices, const ReadoutOptions& opts, nd::ParamList& params);

// Checks the dataset carries the labels the task needs.
void check_task_labels(Task task, const std::vector<synth::SceneSample>& samples, const ReadoutOptions& opts);

// AJ thresholds, in image pixels.
inline constexpr double kAjThresholds[] = {1.0, 2.0, 4.0, 8.0, 16.0};

// Baseline for depth: every pixel predicted as the mean train-split depth.
double mean_depth_baseline(const std::vector<synth::SceneSample>& samples, const Split& split);

// Average denoising loss over the given clean latents with a fixed noise seed.
double heldout_denoise_loss(const backbone::BackboneModel& model, const std::vector<nd::Tensor>& latents,
                            std::uint64_t seed, int repeats = 4);

// Mean |PCA map| over latent tokens covering moving objects vs tokens that see
// only background for the whole clip. An object moves when its segment
// footprint differs between the first and last frame; a token is moving when
// at least half of its pixels, over the frames it covers, are on a moving object.
struct MotionEnergy {
    double moving = 0.0;
    double still = 0.0;
    int moving_tokens = 0;
    int still_tokens = 0;
    std::vector<float> map;  // [T_lat * hw]
};
MotionEnergy motion_energy(const backbone::BackboneModel& model, const synth::SceneSample& sample,
                           const probe::ProbeSpec& spec);

}  // namespace vdprobe::experiment
