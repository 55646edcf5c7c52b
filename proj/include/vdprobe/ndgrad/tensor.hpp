#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "vdprobe/error.hpp"

namespace vdprobe::nd {

enum class DType : std::uint8_t { f32, f64 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

struct Storage {
    Shape shape;
    DType dtype = DType::f32;
    std::vector<float> f32;
    std::vector<double> f64;
    bool requires_grad = false;

    template <class T>
    std::vector<T>& buffer() {
        if constexpr (std::is_same_v<T, float>) {
            return f32;
        } else {
            return f64;
        }
    }
};

}  // namespace detail

// Dense row-major n-d array. Copies share storage; values are treated as
// immutable once an op has produced them. Parameters are the one exception:
// the optimizer rewrites them in place between tapes.
class Tensor {
 public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dtype = DType::f32);
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);
    static Tensor from_vector(Shape shape, std::vector<float> values);
    static Tensor from_vector(Shape shape, std::vector<double> values);
    static Tensor scalar(double value, DType dtype = DType::f32);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    // Negative axes count from the end.
    std::int64_t dim(int axis) const;
    std::int64_t numel() const;
    DType dtype() const;

    template <class T>
    std::span<const T> data() const {
        check_dtype(dtype_of<T>());
        return s_->buffer<T>();
    }

    // Writable view. Only parameter initialization and the optimizer write
    // through this.
    template <class T>
    std::span<T> mutable_data() {
        check_dtype(dtype_of<T>());
        return s_->buffer<T>();
    }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    // Value of a single-element tensor as double.
    double item() const;
    double at(std::int64_t flat_index) const;

    // Deep copy converted to `dtype`; never requires grad.
    Tensor to(DType dtype) const;
    Tensor clone() const { return to(dtype()); }
    std::vector<float> to_f32() const;
    std::vector<double> to_f64() const;

    // Identity of the underlying storage, used as a key by the tape.
    const detail::Storage* id() const { return s_.get(); }
    detail::Storage* storage() const { return s_.get(); }

    bool bitwise_equal(const Tensor& other) const;

 private:
    void check_dtype(DType want) const;
    std::shared_ptr<detail::Storage> s_;
};

}  // namespace vdprobe::nd
