#include "vdprobe/probe/probe.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::probe {

using nd::Tensor;

ProbeSpec ProbeSpec::defaults(const backbone::BackboneConfig& cfg) {
    ProbeSpec s;
    s.block = static_cast<int>(std::lround(2.0 * static_cast<double>(cfg.blocks) / 3.0));
    s.noise_t = backbone::kTimeSteps / 5;
    return s;
}

void ProbeSpec::validate(const backbone::BackboneConfig& cfg) const {
    if (block < 1 || block > cfg.blocks) {
        throw ValidationError("probe block " + std::to_string(block) + " out of range; valid blocks are 1.." +
                              std::to_string(cfg.blocks));
    }
    if (noise_t < 0 || noise_t > backbone::kTimeSteps) {
        throw ValidationError("probe noise_t " + std::to_string(noise_t) + " out of range; valid range is 0.." +
                              std::to_string(backbone::kTimeSteps));
    }
}

FeatureStack extract_features(const backbone::BackboneModel& model, const Tensor& video, const ProbeSpec& spec,
                              const std::string& checkpoint_id) {
    const auto& cfg = model.config();
    spec.validate(cfg);
    nd::NoGradScope no_grad;
    Tensor z0 = model.tokenize(video);
    const double t = backbone::timestep_to_t(spec.noise_t);
    Rng rng(spec.seed);
    Tensor eps = Tensor::from_vector(z0.shape(), rng.normal_vector(static_cast<std::size_t>(z0.numel())));
    Tensor zt = backbone::forward_noise(z0, t, eps);
    zt = nd::reshape(zt, {1, cfg.tokens(), cfg.latent_channels});
    auto out = model.denoise_forward(zt, {t}, spec.block);
    FeatureStack fs;
    fs.activations = nd::reshape(out.features, {cfg.latent_frames(), cfg.tokens_per_frame(), cfg.dim});
    fs.checkpoint_id = checkpoint_id;
    fs.spec = spec;
    return fs;
}

Tensor interpolate_temporal(const Tensor& features, std::int64_t frames) {
    if (features.rank() != 3) {
        throw ShapeError("interpolate_temporal expects [T, tokens, channels], got " + nd::shape_str(features.shape()));
    }
    const std::int64_t tl = features.dim(0);
    if (frames < tl) {
        throw ValidationError("interpolate_temporal: " + std::to_string(frames) + " frames is fewer than " +
                              std::to_string(tl) + " latent frames");
    }
    const std::int64_t row = features.dim(1) * features.dim(2);
    auto src = features.to_f32();
    std::vector<float> out(static_cast<std::size_t>(frames * row));
    for (std::int64_t f = 0; f < frames; ++f) {
        // Exact rational position f * (tl - 1) / (frames - 1).
        const std::int64_t num = frames > 1 ? f * (tl - 1) : 0;
        const std::int64_t den = frames > 1 ? frames - 1 : 1;
        const std::int64_t k0 = num / den;
        const std::int64_t rem = num % den;
        float* dst = out.data() + f * row;
        const float* a = src.data() + k0 * row;
        if (rem == 0) {
            std::copy(a, a + row, dst);
            continue;
        }
        const float* b = a + row;
        const float w = static_cast<float>(static_cast<double>(rem) / static_cast<double>(den));
        for (std::int64_t i = 0; i < row; ++i) dst[i] = a[i] + w * (b[i] - a[i]);
    }
    return Tensor::from_vector({frames, features.dim(1), features.dim(2)}, std::move(out));
}

std::vector<float> pca_map(const Tensor& features) {
    if (features.rank() < 2) {
        throw ShapeError("pca_map expects tokens x channels");
    }
    const std::int64_t d = features.dim(-1);
    const std::int64_t n = features.numel() / d;
    if (n < 2) {
        throw ValidationError("pca_map needs at least 2 tokens");
    }
    auto v = features.to_f64();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(v.data(), n, d);
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mu;
    const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n);
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    if (cov.trace() <= 1e-24 * scale * scale) {
        throw ValidationError("pca_map: features have zero variance (all tokens identical)");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd top = es.eigenvectors().col(d - 1);
    Eigen::VectorXd proj = c * top;
    Eigen::Index imax = 0;
    const double m = proj.cwiseAbs().maxCoeff(&imax);
    if (m == 0.0) {
        throw ValidationError("pca_map: projection vanished");
    }
    proj /= (proj(imax) > 0 ? m : -m);
    return {proj.data(), proj.data() + proj.size()};
}

std::uint8_t palette(float v) {
    const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
    return static_cast<std::uint8_t>(std::lround((c + 1.0) / 2.0 * 255.0));
}

void write_pgm(const std::string& path, const Raster& r) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    os << "P5\n" << r.width << ' ' << r.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (!os) {
        throw IoError("write failed for '" + path + "'");
    }
}

Raster read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path + "'");
    }
    std::string magic;
    Raster r;
    int maxval = 0;
    is >> magic >> r.width >> r.height >> maxval;
    if (!is || magic != "P5" || maxval != 255 || r.width <= 0 || r.height <= 0) {
        throw FormatError("'" + path + "' is not an 8-bit binary PGM");
    }
    is.get();
    r.pixels.resize(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height));
    is.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
        throw FormatError("'" + path + "' is truncated");
    }
    return r;
}

std::vector<std::string> render_pca_image(const std::vector<float>& map, int latent_h, int latent_w,
                                          const std::string& prefix, int upscale) {
    const std::size_t hw = static_cast<std::size_t>(latent_h) * static_cast<std::size_t>(latent_w);
    if (hw == 0 || upscale < 1 || map.empty() || map.size() % hw != 0) {
        throw ShapeError("render_pca_image: map of " + std::to_string(map.size()) + " values does not tile " +
                         std::to_string(latent_h) + "x" + std::to_string(latent_w) + " frames");
    }
    std::vector<std::string> paths;
    for (std::size_t f = 0; f < map.size() / hw; ++f) {
        Raster r;
        r.width = latent_w * upscale;
        r.height = latent_h * upscale;
        r.pixels.resize(static_cast<std::size_t>(r.width) * r.height);
        for (int y = 0; y < r.height; ++y) {
            for (int x = 0; x < r.width; ++x) {
                const std::size_t src = f * hw + static_cast<std::size_t>(y / upscale) * latent_w + x / upscale;
                r.pixels[static_cast<std::size_t>(y) * r.width + x] = palette(map[src]);
            }
        }
        paths.push_back(prefix + "_f" + std::to_string(f) + ".pgm");
        write_pgm(paths.back(), r);
    }
    return paths;
}

}  // namespace vdprobe::probe
