#pragma once

#include <string>

#include "vdprobe/ndgrad/ops.hpp"
#include "vdprobe/ndgrad/optim.hpp"
#include "vdprobe/ndgrad/rng.hpp"

namespace vdprobe::nd {

// Trainable tensor drawn from N(0, stddev^2); stddev 0 gives zeros.
Tensor make_param(Rng& rng, Shape shape, double stddev);
Tensor make_const_param(Shape shape, double value);

// y = x W + b with W [in, out].
struct Linear {
    Tensor w;
    Tensor b;

    Linear() = default;
    Linear(Rng& rng, std::int64_t in, std::int64_t out, double stddev = -1.0);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(std::int64_t width);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// Linear -> GeLU -> Linear.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(Rng& rng, std::int64_t in, std::int64_t hidden, std::int64_t out);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// Multi-head attention block with separate query / key-value sources.
struct CrossAttention {
    Linear q;
    Linear k;
    Linear v;
    Linear o;
    int heads = 1;

    CrossAttention() = default;
    CrossAttention(Rng& rng, std::int64_t q_in, std::int64_t kv_in, std::int64_t width,
                   std::int64_t out, int heads);
    // xq [B, Nq, q_in], xkv [B, Nk, kv_in] -> [B, Nq, out].
    Tensor operator()(const Tensor& xq, const Tensor& xkv, const AttentionMask* mask = nullptr) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// Casts every parameter to `dtype` in place (used for 64-bit gradient checks).
void cast_params(ParamList& params, DType dtype);

}  // namespace vdprobe::nd
