#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdprobe/backbone/train.hpp"
#include "vdprobe/probe/probe.hpp"
#include "vdprobe/readouts/readouts.hpp"
#include "vdprobe/synthworld/dataset.hpp"

namespace vdprobe::experiment {

enum class Task { cls, action, depth, pose, point, box };
std::string task_name(Task t);
Task parse_task(const std::string& s);
std::string task_metric(Task t);
metrics::Direction task_direction(Task t);

struct ExperimentConfig {
    synth::DatasetSpec data;
    backbone::BackboneConfig backbone;
    backbone::TrainConfig train;
    probe::ProbeSpec probe;
    Task task = Task::point;
    readouts::FitConfig readout{2000, 0, nd::AdamWConfig{}, nd::WarmupCosine{0.0, 3e-4, 1e-7, 1000, 2000}};
    int readout_batch = 4;
    std::vector<std::uint64_t> seeds{0};
    // Trailing fraction of the dataset held out for evaluation.
    double holdout = 0.25;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;

    KeyValues to_kv() const;
    // Unknown keys are rejected. Missing keys keep their defaults; the probe
    // block defaults to two thirds of the backbone depth.
    static ExperimentConfig from_kv(const KeyValues& kv);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s);
std::vector<int> parse_int_list(const std::string& s);

}  // namespace vdprobe::experiment
