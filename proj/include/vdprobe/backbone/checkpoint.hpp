#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vdprobe/ndgrad/tensor.hpp"

namespace vdprobe {

using KeyValues = std::map<std::string, std::string>;
using NamedTensors = std::vector<std::pair<std::string, nd::Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorFile {
    NamedTensors tensors;
    KeyValues config;

    const nd::Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

// "LPRB" | version u32 | count u32 | per tensor: name u16+bytes, rank u8,
// dims u32..., f32 data | config length u32 + key=value lines. Little-endian.
// Written to a temp file and renamed into place.
void write_tensor_file(const std::string& path, const NamedTensors& tensors, const KeyValues& config);
TensorFile read_tensor_file(const std::string& path);

std::string format_key_values(const KeyValues& kv);
KeyValues parse_key_values(const std::string& text, const std::string& origin);

}  // namespace vdprobe
