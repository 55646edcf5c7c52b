#include "vdprobe/ndgrad/optim.hpp"

#include <cmath>
#include <numbers>

namespace vdprobe::nd {

std::vector<Tensor> param_tensors(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) {
        out.push_back(t);
    }
    return out;
}

std::int64_t param_count(const ParamList& params) {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) {
        n += t.numel();
    }
    return n;
}

void AdamW::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
    if (params.size() != grads.size()) {
        throw ShapeError("adamw: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
    }
    if (shapes_.empty()) {
        for (const auto& p : params) {
            shapes_.push_back(p.shape());
            m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
            v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
        }
    }
    if (shapes_.size() != params.size()) {
        throw ShapeError("adamw: parameter count changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != shapes_[i] || grads[i].shape() != shapes_[i]) {
            throw ShapeError("adamw: shape mismatch for parameter " + std::to_string(i) + ": " +
                             shape_str(params[i].shape()) + " / grad " +
                             shape_str(grads[i].shape()) + " / state " + shape_str(shapes_[i]));
        }
        if (params[i].dtype() != DType::f32 || grads[i].dtype() != DType::f32) {
            throw ValidationError("adamw: parameters and grads must be f32");
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data<float>();
        auto g = grads[i].data<float>();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj);
            v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] = static_cast<float>(p[j] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

std::vector<std::pair<std::string, Tensor>> AdamW::export_state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < shapes_.size(); ++i) {
        out.emplace_back("m." + std::to_string(i), Tensor::from_vector(shapes_[i], m_[i]));
        out.emplace_back("v." + std::to_string(i), Tensor::from_vector(shapes_[i], v_[i]));
    }
    return out;
}

void AdamW::import_state(const std::vector<std::pair<std::string, Tensor>>& state,
                         std::int64_t step_count) {
    if (state.size() % 2 != 0) {
        throw FormatError("adamw: moment buffers must come in m/v pairs");
    }
    shapes_.clear();
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < state.size() / 2; ++i) {
        const auto& [mn, mt] = state[2 * i];
        const auto& [vn, vt] = state[2 * i + 1];
        if (mn != "m." + std::to_string(i) || vn != "v." + std::to_string(i)) {
            throw FormatError("adamw: unexpected state entry '" + mn + "'");
        }
        if (mt.shape() != vt.shape()) {
            throw FormatError("adamw: moment shape mismatch at " + std::to_string(i));
        }
        shapes_.push_back(mt.shape());
        m_.push_back(mt.to_f32());
        v_.push_back(vt.to_f32());
    }
    step_ = step_count;
}

double lr_at_step(std::int64_t step, const WarmupCosine& s) {
    if (step < 0 || step > s.total) {
        throw ValidationError("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                              std::to_string(s.total) + "]");
    }
    if (s.warmup > 0 && step <= s.warmup) {
        return s.init + (s.peak - s.init) * static_cast<double>(step) / static_cast<double>(s.warmup);
    }
    const std::int64_t span = s.total - s.warmup;
    if (span <= 0) {
        return s.end;
    }
    const double frac = static_cast<double>(step - s.warmup) / static_cast<double>(span);
    return s.end + 0.5 * (s.peak - s.end) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace vdprobe::nd
