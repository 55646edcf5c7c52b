#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vdprobe/ndgrad/tensor.hpp"

namespace vdprobe::nd {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kHuberDelta = 1.0;

// Sparse allowed-key lists per query row for masked attention.
class AttentionMask {
 public:
    AttentionMask() = default;
    AttentionMask(std::int64_t num_queries, std::int64_t num_keys,
                  const std::function<bool(std::int64_t, std::int64_t)>& allowed);
    static AttentionMask full(std::int64_t num_queries, std::int64_t num_keys);

    std::int64_t num_queries() const { return nq_; }
    std::int64_t num_keys() const { return nk_; }
    std::span<const std::int64_t> keys(std::int64_t query) const;
    bool allows(std::int64_t query, std::int64_t key) const;
    std::int64_t nnz() const { return static_cast<std::int64_t>(keys_.size()); }

    // Queries sharing an identical allowed-key list, evaluated as one dense block.
    struct Group {
        std::vector<std::int64_t> queries;
        std::vector<std::int64_t> keys;
    };
    const std::vector<Group>& groups() const { return groups_; }

 private:
    std::vector<Group> groups_;
    std::int64_t nq_ = 0;
    std::int64_t nk_ = 0;
    std::vector<std::int64_t> offsets_;
    std::vector<std::int64_t> keys_;
};

// a [..., M, K] x b [K, N] -> [..., M, N]; or batched b [..., K, N] with the
// same leading extents as a.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise. `b` must have a's shape or a trailing suffix of it (broadcast
// over leading batch axes only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis);

// Row gather: table [V, D] -> [n, D].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> indices);

// Multi-head scaled dot-product attention. q [B, Nq, D], k/v [B, Nk, D];
// heads split D evenly. The mask, when given, is shared across the batch.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const AttentionMask* mask = nullptr);

// Elementwise losses.
Tensor huber(const Tensor& pred, const Tensor& target, double delta = kHuberDelta);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
// Scalar losses (mean over elements / rows).
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels);

// Attributes for the name-dispatched entry point.
struct KernelAttrs {
    Shape shape;
    int axis = -1;
    std::int64_t start = 0;
    std::int64_t length = 0;
    std::vector<std::int64_t> indices;
    int heads = 1;
    const AttentionMask* mask = nullptr;
    double factor = 1.0;
};

Tensor kernel_forward(std::string_view name, std::span<const Tensor> inputs,
                      const KernelAttrs& attrs = {});
const std::vector<std::string>& kernel_names();

}  // namespace vdprobe::nd
