#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vdprobe/ndgrad/tensor.hpp"

namespace vdprobe::nd {

// Named trainable tensors, in a stable order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

std::vector<Tensor> param_tensors(const ParamList& params);
std::int64_t param_count(const ParamList& params);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay: p <- p(1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
class AdamW {
 public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }

    // Updates every parameter in place. Moment buffers are created on the
    // first call and must keep matching shapes afterwards.
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

    // Moment buffers as tensors ("m.<i>", "v.<i>") plus the step counter, for
    // checkpoint round trips.
    std::vector<std::pair<std::string, Tensor>> export_state() const;
    void import_state(const std::vector<std::pair<std::string, Tensor>>& state,
                      std::int64_t step_count);

 private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::vector<Shape> shapes_;
};

// Linear warmup from `init` to `peak` over `warmup` steps, then cosine decay
// to `end` at `total`.
struct WarmupCosine {
    double init = 0.0;
    double peak = 3e-4;
    double end = 1e-7;
    std::int64_t warmup = 1000;
    std::int64_t total = 10000;
};

double lr_at_step(std::int64_t step, const WarmupCosine& schedule);

}  // namespace vdprobe::nd
