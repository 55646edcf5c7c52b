#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "vdprobe/ndgrad/tensor.hpp"

namespace vdprobe::nd {

class Tape;

// Handed to a node's backward closure: read the output gradient, accumulate
// into input gradients. Inputs that do not require grad yield empty spans.
class BackwardContext {
 public:
    BackwardContext(Tape& tape, const std::vector<Tensor>& inputs, const Tensor& output)
        : tape_(tape), inputs_(inputs), output_(output) {}

    template <class T>
    std::span<const T> grad_out() const;

    template <class T>
    std::span<T> grad_in(std::size_t input_index) const;

    bool needs(std::size_t input_index) const { return inputs_[input_index].requires_grad(); }
    const Tensor& input(std::size_t i) const { return inputs_[i]; }
    const Tensor& output() const { return output_; }

 private:
    Tape& tape_;
    const std::vector<Tensor>& inputs_;
    const Tensor& output_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Ordered record of ops executed while the tape is active. Gradients are held
// by the tape itself, so several tapes may share read-only parameters.
class Tape {
 public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Reverse sweep from a scalar loss. Throws if called twice.
    void backward(const Tensor& loss);

    // Gradient accumulated for `t`; zeros of matching shape if unreachable.
    Tensor grad(const Tensor& t) const;
    // Whether any gradient buffer was created for `t`.
    bool has_grad(const Tensor& t) const { return grads_.contains(t.id()); }

    template <class T>
    std::vector<T>& grad_buffer(const Tensor& t);

 private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    struct GradBuffer {
        std::vector<float> f32;
        std::vector<double> f64;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const detail::Storage*, GradBuffer> grads_;
    bool consumed_ = false;
};

// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

 private:
    Tape* previous_;
};

// Suspends recording on the calling thread (inference inside a training loop).
class NoGradScope {
 public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

 private:
    Tape* previous_;
};

Tape* active_tape();

// Runs backward on the active tape and returns one gradient per parameter, in
// order. Parameters the loss does not reach get zero gradients.
std::vector<Tensor> gradient_of(const Tensor& loss, std::span<const Tensor> params);

template <class T>
std::span<const T> BackwardContext::grad_out() const {
    return tape_.grad_buffer<T>(output_);
}

template <class T>
std::span<T> BackwardContext::grad_in(std::size_t input_index) const {
    const Tensor& in = inputs_[input_index];
    if (!in.requires_grad()) {
        return {};
    }
    return tape_.grad_buffer<T>(in);
}

template <class T>
std::vector<T>& Tape::grad_buffer(const Tensor& t) {
    auto& buf = grads_[t.id()];
    std::vector<T>* v = nullptr;
    if constexpr (std::is_same_v<T, float>) {
        v = &buf.f32;
    } else {
        v = &buf.f64;
    }
    if (v->empty()) {
        v->assign(static_cast<std::size_t>(t.numel()), T(0));
    }
    return *v;
}

}  // namespace vdprobe::nd
