#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdprobe/backbone/checkpoint.hpp"
#include "vdprobe/ndgrad/tensor.hpp"
#include "vdprobe/synthworld/scene.hpp"

namespace vdprobe::synth {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetSpec {
    std::uint64_t seed = 0;
    int count = 64;
    int frames = 9;
    int height = 64;
    int width = 64;
    int tracks = 64;
    int max_objects = 6;
    std::vector<Action> actions{Action::left_to_right, Action::right_to_left, Action::approach,
                                Action::recede,        Action::rotate,        Action::still};
    std::vector<CameraMotion> cameras{CameraMotion::fixed, CameraMotion::translate, CameraMotion::orbit};

    void validate() const;
    KeyValues to_kv() const;
    static DatasetSpec from_kv(const KeyValues& kv);
    // SHA-256 over the canonical key=value text.
    std::string hash() const;
};

// Sample i: seed = spec.seed + i, action and camera cycled so labels are balanced.
SceneSpec scene_spec(const DatasetSpec& spec, int index);
std::vector<SceneSample> generate_dataset(const DatasetSpec& spec);

std::string encode_sample(const SceneSample& s);
// `name` is used in error messages.
SceneSample decode_sample(const std::string& bytes, const std::string& name);

struct Dataset {
    DatasetSpec spec;
    std::string spec_hash;
    std::vector<SceneSample> samples;
};

// index.txt + sample_{i}.bin.
void write_dataset(const std::string& dir, const DatasetSpec& spec, const std::vector<SceneSample>& samples);
Dataset read_dataset(const std::string& dir);
// SHA-256 over index.txt and every sample file, in order.
std::string dataset_hash(const std::string& dir);

std::string sha256_hex(const std::string& bytes);

// Video as floats in [-1, 1], shape [frames, H, W, 3].
nd::Tensor video_tensor(const SceneSample& s);
// Frame 0 repeated over all frames (image tasks on video-length inputs).
nd::Tensor still_video_tensor(const SceneSample& s);

}  // namespace vdprobe::synth
