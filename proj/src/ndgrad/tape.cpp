#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::nd {

namespace {
thread_local Tape* t_active = nullptr;
}

Tape* active_tape() {
    return t_active;
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active) {
    t_active = &tape;
}

TapeScope::~TapeScope() {
    t_active = previous_;
}

NoGradScope::NoGradScope() : previous_(t_active) {
    t_active = nullptr;
}

NoGradScope::~NoGradScope() {
    t_active = previous_;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
    if (consumed_) {
        throw ValidationError("tape already consumed by backward; start a new tape");
    }
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw ValidationError("backward called twice on the same tape");
    }
    if (loss.numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ValidationError("loss does not depend on any tensor requiring grad");
    }
    consumed_ = true;
    if (loss.dtype() == DType::f32) {
        grad_buffer<float>(loss)[0] = 1.0f;
    } else {
        grad_buffer<double>(loss)[0] = 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!grads_.contains(it->output.id())) {
            continue;
        }
        BackwardContext ctx(*this, it->inputs, it->output);
        it->backward(ctx);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (t.dtype() == DType::f32) {
        if (it == grads_.end() || it->second.f32.empty()) {
            return Tensor::zeros(t.shape(), DType::f32);
        }
        return Tensor::from_vector(t.shape(), it->second.f32);
    }
    if (it == grads_.end() || it->second.f64.empty()) {
        return Tensor::zeros(t.shape(), DType::f64);
    }
    return Tensor::from_vector(t.shape(), it->second.f64);
}

std::vector<Tensor> gradient_of(const Tensor& loss, std::span<const Tensor> params) {
    Tape* tape = active_tape();
    if (tape == nullptr) {
        throw ValidationError("gradient_of: no active tape");
    }
    tape->backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(tape->grad(p));
    }
    return out;
}

}  // namespace vdprobe::nd
