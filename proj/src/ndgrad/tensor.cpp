#include "vdprobe/ndgrad/tensor.hpp"

#include <cstring>
#include <sstream>

namespace vdprobe::nd {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) {
            throw ShapeError("negative extent in shape " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
    return full(std::move(shape), 0.0, dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t;
    t.s_ = std::make_shared<detail::Storage>();
    const auto n = static_cast<std::size_t>(numel_of(shape));
    t.s_->shape = std::move(shape);
    t.s_->dtype = dtype;
    if (dtype == DType::f32) {
        t.s_->f32.assign(n, static_cast<float>(value));
    } else {
        t.s_->f64.assign(n, value);
    }
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<detail::Storage>();
    t.s_->shape = std::move(shape);
    t.s_->dtype = DType::f32;
    t.s_->f32 = std::move(values);
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<detail::Storage>();
    t.s_->shape = std::move(shape);
    t.s_->dtype = DType::f64;
    t.s_->f64 = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
    return full({}, value, dtype);
}

const Shape& Tensor::shape() const {
    if (!s_) {
        throw ValidationError("use of undefined tensor");
    }
    return s_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return s_->shape[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const {
    return numel_of(shape());
}

DType Tensor::dtype() const {
    if (!s_) {
        throw ValidationError("use of undefined tensor");
    }
    return s_->dtype;
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (!s_) {
        throw ValidationError("use of undefined tensor");
    }
    s_->requires_grad = on;
    return *this;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= numel()) {
        throw ShapeError("flat index out of range");
    }
    const auto i = static_cast<std::size_t>(flat_index);
    return dtype() == DType::f32 ? static_cast<double>(s_->f32[i]) : s_->f64[i];
}

Tensor Tensor::to(DType target) const {
    Tensor out;
    out.s_ = std::make_shared<detail::Storage>();
    out.s_->shape = shape();
    out.s_->dtype = target;
    if (target == DType::f32) {
        if (dtype() == DType::f32) {
            out.s_->f32 = s_->f32;
        } else {
            out.s_->f32.assign(s_->f64.begin(), s_->f64.end());
        }
    } else {
        if (dtype() == DType::f64) {
            out.s_->f64 = s_->f64;
        } else {
            out.s_->f64.assign(s_->f32.begin(), s_->f32.end());
        }
    }
    return out;
}

std::vector<float> Tensor::to_f32() const {
    if (dtype() == DType::f32) {
        return s_->f32;
    }
    return {s_->f64.begin(), s_->f64.end()};
}

std::vector<double> Tensor::to_f64() const {
    if (dtype() == DType::f64) {
        return s_->f64;
    }
    return {s_->f32.begin(), s_->f32.end()};
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (shape() != other.shape() || dtype() != other.dtype()) {
        return false;
    }
    if (dtype() == DType::f32) {
        return std::memcmp(s_->f32.data(), other.s_->f32.data(), s_->f32.size() * sizeof(float)) == 0;
    }
    return std::memcmp(s_->f64.data(), other.s_->f64.data(), s_->f64.size() * sizeof(double)) == 0;
}

void Tensor::check_dtype(DType want) const {
    if (!s_) {
        throw ValidationError("use of undefined tensor");
    }
    if (s_->dtype != want) {
        throw ValidationError("dtype mismatch: tensor is " +
                              std::string(s_->dtype == DType::f32 ? "f32" : "f64"));
    }
}

}  // namespace vdprobe::nd
