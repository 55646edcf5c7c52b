#include "vdprobe/ndgrad/nn.hpp"

#include <cmath>

namespace vdprobe::nd {

Tensor make_param(Rng& rng, Shape shape, double stddev) {
    const auto n = static_cast<std::size_t>(numel_of(shape));
    std::vector<float> values(n, 0.0f);
    if (stddev > 0.0) {
        values = rng.normal_vector(n, stddev);
    }
    Tensor t = Tensor::from_vector(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
}

Tensor make_const_param(Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

Linear::Linear(Rng& rng, std::int64_t in, std::int64_t out, double stddev)
    : w(make_param(rng, {in, out}, stddev < 0.0 ? 1.0 / std::sqrt(static_cast<double>(in)) : stddev)),
      b(make_const_param({out}, 0.0)) {}

Tensor Linear::operator()(const Tensor& x) const {
    return add(matmul(x, w), b);
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

LayerNorm::LayerNorm(std::int64_t width)
    : gain(make_const_param({width}, 1.0)), bias(make_const_param({width}, 0.0)) {}

Tensor LayerNorm::operator()(const Tensor& x) const {
    return layer_norm(x, gain, bias);
}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

Mlp::Mlp(Rng& rng, std::int64_t in, std::int64_t hidden, std::int64_t out)
    : fc1(rng, in, hidden), fc2(rng, hidden, out) {}

Tensor Mlp::operator()(const Tensor& x) const {
    return fc2(gelu(fc1(x)));
}

void Mlp::collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

CrossAttention::CrossAttention(Rng& rng, std::int64_t q_in, std::int64_t kv_in, std::int64_t width,
                               std::int64_t out, int heads_)
    : q(rng, q_in, width), k(rng, kv_in, width), v(rng, kv_in, width), o(rng, width, out), heads(heads_) {}

Tensor CrossAttention::operator()(const Tensor& xq, const Tensor& xkv, const AttentionMask* mask) const {
    return o(attention(q(xq), k(xkv), v(xkv), heads, mask));
}

void CrossAttention::collect(ParamList& out, const std::string& prefix) const {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    o.collect(out, prefix + ".o");
}

void cast_params(ParamList& params, DType dtype) {
    for (auto& [name, t] : params) {
        detail::Storage* s = t.storage();
        if (s->dtype == dtype) {
            continue;
        }
        if (dtype == DType::f64) {
            s->f64.assign(s->f32.begin(), s->f32.end());
            s->f32.clear();
        } else {
            s->f32.assign(s->f64.begin(), s->f64.end());
            s->f64.clear();
        }
        s->dtype = dtype;
    }
}

}  // namespace vdprobe::nd
