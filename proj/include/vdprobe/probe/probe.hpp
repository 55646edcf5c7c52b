#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdprobe/backbone/model.hpp"

namespace vdprobe::probe {

struct ProbeSpec {
    int noise_t = 200;  // in [0, kTimeSteps]
    int block = 8;      // in [1, L]
    std::uint64_t seed = 0;

    // Block at two thirds of the depth, noise at a fifth of the timestep range.
    static ProbeSpec defaults(const backbone::BackboneConfig& cfg);
    void validate(const backbone::BackboneConfig& cfg) const;
};

struct FeatureStack {
    nd::Tensor activations;  // [T_lat, hw, d]
    std::string checkpoint_id;
    ProbeSpec spec;
};

// Tokenize, noise with eps drawn from spec.seed, one denoiser pass, capture.
FeatureStack extract_features(const backbone::BackboneModel& model, const nd::Tensor& video,
                              const ProbeSpec& spec, const std::string& checkpoint_id = "");

// [T_lat, hw, d] -> [frames, hw, d], linear and endpoint-aligned.
nd::Tensor interpolate_temporal(const nd::Tensor& features, std::int64_t frames);
inline nd::Tensor interpolate_temporal(const FeatureStack& fs, std::int64_t frames) {
    return interpolate_temporal(fs.activations, frames);
}

// Rows of `features` (any leading shape, channels last) projected on the top
// principal direction, scaled to max |v| = 1, largest-magnitude entry positive.
std::vector<float> pca_map(const nd::Tensor& features);
inline std::vector<float> pca_map(const FeatureStack& fs) {
    return pca_map(fs.activations);
}

struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major gray
};

// Palette: v in [-1, 1] -> round((v + 1) / 2 * 255).
std::uint8_t palette(float v);

// One binary PGM per latent frame: `{prefix}_f{index}.pgm`, each latent pixel
// drawn as an upscale x upscale block. Returns the paths written.
std::vector<std::string> render_pca_image(const std::vector<float>& map, int latent_h, int latent_w,
                                          const std::string& prefix, int upscale = 1);

void write_pgm(const std::string& path, const Raster& r);
Raster read_pgm(const std::string& path);

}  // namespace vdprobe::probe
