#include "vdprobe/ndgrad/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "vdprobe/ndgrad/tape.hpp"

namespace vdprobe::nd {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const MatR<T>>;
template <class T>
using MapM = Eigen::Map<MatR<T>>;

using Index = std::int64_t;

template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
    if (dt == DType::f32) {
        return f(float{});
    }
    return f(double{});
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ValidationError(std::string(op) + ": mixed dtypes");
    }
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
    }
    return a;
}

void check_finite(const Tensor& t, const char* op) {
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto v = t.data<T>();
        if (!Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(v.data(), static_cast<Index>(v.size())).allFinite()) {
            throw NumericError(std::string(op) + ": non-finite output");
        }
    });
}

Tensor finish(Tensor out, std::vector<Tensor> inputs, BackwardFn fn, const char* op) {
    check_finite(out, op);
    Tape* tape = active_tape();
    if (tape == nullptr) {
        return out;
    }
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) {
        return out;
    }
    out.set_requires_grad(true);
    tape->record(std::move(inputs), out, std::move(fn));
    return out;
}

// True when `b` equals `a` or a trailing suffix of it.
bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) {
        return false;
    }
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

enum class Binary { add, sub, mul };

Tensor binary_op(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
    require_same_dtype(a, b, name);
    if (!is_suffix(a.shape(), b.shape())) {
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto av = a.data<T>();
        auto bv = b.data<T>();
        auto ov = out.mutable_data<T>();
        const std::size_t nb = bv.size();
        for (std::size_t o = 0; o < av.size(); o += nb) {
            const T* x = av.data() + o;
            T* z = ov.data() + o;
            switch (kind) {
                case Binary::add: for (std::size_t j = 0; j < nb; ++j) z[j] = x[j] + bv[j]; break;
                case Binary::sub: for (std::size_t j = 0; j < nb; ++j) z[j] = x[j] - bv[j]; break;
                case Binary::mul: for (std::size_t j = 0; j < nb; ++j) z[j] = x[j] * bv[j]; break;
            }
        }
    });
    auto fn = [kind](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto ga = ctx.grad_in<T>(0);
            auto gb = ctx.grad_in<T>(1);
            auto av = ctx.input(0).data<T>();
            auto bv = ctx.input(1).data<T>();
            const std::size_t nb = bv.size();
            for (std::size_t o = 0; o < go.size(); o += nb) {
                const T* g = go.data() + o;
                switch (kind) {
                    case Binary::add:
                    case Binary::sub: {
                        const T sign = kind == Binary::add ? T(1) : T(-1);
                        if (!ga.empty()) for (std::size_t j = 0; j < nb; ++j) ga[o + j] += g[j];
                        if (!gb.empty()) for (std::size_t j = 0; j < nb; ++j) gb[j] += sign * g[j];
                        break;
                    }
                    case Binary::mul:
                        if (!ga.empty()) for (std::size_t j = 0; j < nb; ++j) ga[o + j] += g[j] * bv[j];
                        if (!gb.empty()) for (std::size_t j = 0; j < nb; ++j) gb[j] += g[j] * av[o + j];
                        break;
                }
            }
        });
    };
    return finish(out, {a, b}, fn, name);
}

}  // namespace

// ---------------------------------------------------------------------------
// AttentionMask

AttentionMask::AttentionMask(Index num_queries, Index num_keys,
                             const std::function<bool(Index, Index)>& allowed)
    : nq_(num_queries), nk_(num_keys) {
    offsets_.reserve(static_cast<std::size_t>(nq_ + 1));
    offsets_.push_back(0);
    std::map<std::vector<Index>, std::size_t> group_of;
    std::vector<Index> row;
    for (Index i = 0; i < nq_; ++i) {
        row.clear();
        for (Index j = 0; j < nk_; ++j) {
            if (allowed(i, j)) {
                row.push_back(j);
            }
        }
        if (row.empty()) {
            throw ValidationError("attention mask: query " + std::to_string(i) +
                                  " has no allowed keys");
        }
        keys_.insert(keys_.end(), row.begin(), row.end());
        offsets_.push_back(static_cast<Index>(keys_.size()));
        auto [it, fresh] = group_of.try_emplace(row, groups_.size());
        if (fresh) {
            groups_.push_back(Group{{}, row});
        }
        groups_[it->second].queries.push_back(i);
    }
}

AttentionMask AttentionMask::full(Index num_queries, Index num_keys) {
    return AttentionMask(num_queries, num_keys, [](Index, Index) { return true; });
}

std::span<const Index> AttentionMask::keys(Index query) const {
    const auto b = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(query)]);
    const auto e = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(query) + 1]);
    return std::span<const Index>(keys_).subspan(b, e - b);
}

bool AttentionMask::allows(Index query, Index key) const {
    auto ks = keys(query);
    return std::binary_search(ks.begin(), ks.end(), key);
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul");
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands need rank >= 2");
    }
    const Index m = a.dim(-2);
    const Index k = a.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const Index n = b.dim(-1);
    const bool batched_b = b.rank() > 2;
    Index batch = a.numel() / (m * k);
    if (batched_b) {
        Shape lead_a(a.shape().begin(), a.shape().end() - 2);
        Shape lead_b(b.shape().begin(), b.shape().end() - 2);
        if (lead_a != lead_b) {
            throw ShapeError("matmul: batch extents differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape, a.dtype());

    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = a.data<T>().data();
        const T* bp = b.data<T>().data();
        T* op = out.mutable_data<T>().data();
        // Eigen's kernel for the last rows % 4 accumulates in a different order;
        // padding keeps every row's result independent of its position.
        auto gemm = [&](T* o, const T* x, const T* y, Index rows) {
            if (rows % 4 == 0) {
                MapM<T>(o, rows, n).noalias() = MapC<T>(x, rows, k) * MapC<T>(y, k, n);
                return;
            }
            const Index padded = (rows + 3) / 4 * 4;
            std::vector<T> xp(static_cast<std::size_t>(padded * k), T(0));
            std::copy(x, x + rows * k, xp.begin());
            std::vector<T> yp(static_cast<std::size_t>(padded * n));
            MapM<T>(yp.data(), padded, n).noalias() = MapC<T>(xp.data(), padded, k) * MapC<T>(y, k, n);
            std::copy(yp.begin(), yp.begin() + rows * n, o);
        };
        if (!batched_b) {
            gemm(op, ap, bp, batch * m);
        } else {
            for (Index i = 0; i < batch; ++i) gemm(op + i * m * n, ap + i * m * k, bp + i * k * n, m);
        }
    });

    auto fn = [m, k, n, batch, batched_b](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = ctx.grad_out<T>().data();
            const T* ap = ctx.input(0).data<T>().data();
            const T* bp = ctx.input(1).data<T>().data();
            auto ga = ctx.grad_in<T>(0);
            auto gb = ctx.grad_in<T>(1);
            if (!batched_b) {
                MapC<T> g(go, batch * m, n);
                if (!ga.empty()) {
                    MapM<T>(ga.data(), batch * m, k).noalias() += g * MapC<T>(bp, k, n).transpose();
                }
                if (!gb.empty()) {
                    MapM<T>(gb.data(), k, n).noalias() += MapC<T>(ap, batch * m, k).transpose() * g;
                }
                return;
            }
            for (Index i = 0; i < batch; ++i) {
                MapC<T> g(go + i * m * n, m, n);
                if (!ga.empty()) {
                    MapM<T>(ga.data() + i * m * k, m, k).noalias() +=
                        g * MapC<T>(bp + i * k * n, k, n).transpose();
                }
                if (!gb.empty()) {
                    MapM<T>(gb.data() + i * k * n, k, n).noalias() +=
                        MapC<T>(ap + i * m * k, m, k).transpose() * g;
                }
            }
        });
    };
    return finish(out, {a, b}, fn, "matmul");
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Binary::add, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Binary::sub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Binary::mul, "mul");
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto av = a.data<T>();
        auto ov = out.mutable_data<T>();
        for (std::size_t i = 0; i < av.size(); ++i) {
            ov[i] = av[i] * static_cast<T>(factor);
        }
    });
    auto fn = [factor](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto ga = ctx.grad_in<T>(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i] * static_cast<T>(factor);
            }
        });
    };
    return finish(out, {a}, fn, "scale");
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Tensor softmax(const Tensor& x) {
    if (x.rank() < 1) {
        throw ShapeError("softmax: rank 0 input");
    }
    const Index d = x.dim(-1);
    const Index rows = x.numel() / std::max<Index>(d, 1);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * d;
            T* orow = ov.data() + r * d;
            T mx = *std::max_element(xr, xr + d);
            double total = 0.0;
            for (Index j = 0; j < d; ++j) {
                orow[j] = std::exp(xr[j] - mx);
                total += static_cast<double>(orow[j]);
            }
            const T inv = static_cast<T>(1.0 / total);
            for (Index j = 0; j < d; ++j) {
                orow[j] *= inv;
            }
        }
    });
    auto fn = [d, rows](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto y = ctx.output().data<T>();
            auto gx = ctx.grad_in<T>(0);
            for (Index r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (Index j = 0; j < d; ++j) {
                    dot += static_cast<double>(go[r * d + j]) * y[r * d + j];
                }
                for (Index j = 0; j < d; ++j) {
                    gx[r * d + j] += y[r * d + j] * (go[r * d + j] - static_cast<T>(dot));
                }
            }
        });
    };
    return finish(out, {x}, fn, "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_same_dtype(x, gain, "layer_norm");
    require_same_dtype(x, bias, "layer_norm");
    const Index d = x.dim(-1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    }
    const Index rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto g = gain.data<T>();
        auto b = bias.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * d;
            double mu = 0.0;
            for (Index j = 0; j < d; ++j) mu += xr[j];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (Index j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= static_cast<double>(d);
            const double rstd = 1.0 / std::sqrt(var + eps);
            for (Index j = 0; j < d; ++j) {
                ov[r * d + j] = static_cast<T>((xr[j] - mu) * rstd) * g[j] + b[j];
            }
        }
    });
    auto fn = [d, rows, eps](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto xv = ctx.input(0).data<T>();
            auto g = ctx.input(1).data<T>();
            auto gx = ctx.grad_in<T>(0);
            auto gg = ctx.grad_in<T>(1);
            auto gb = ctx.grad_in<T>(2);
            std::vector<double> xhat(static_cast<std::size_t>(d));
            for (Index r = 0; r < rows; ++r) {
                const T* xr = xv.data() + r * d;
                const T* gr = go.data() + r * d;
                double mu = 0.0;
                for (Index j = 0; j < d; ++j) mu += xr[j];
                mu /= static_cast<double>(d);
                double var = 0.0;
                for (Index j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                var /= static_cast<double>(d);
                const double rstd = 1.0 / std::sqrt(var + eps);
                double mean_dxh = 0.0;
                double mean_dxh_xh = 0.0;
                for (Index j = 0; j < d; ++j) {
                    xhat[j] = (xr[j] - mu) * rstd;
                    const double dxh = static_cast<double>(gr[j]) * g[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xhat[j];
                    if (!gg.empty()) gg[j] += static_cast<T>(gr[j] * xhat[j]);
                    if (!gb.empty()) gb[j] += gr[j];
                }
                if (gx.empty()) continue;
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xh /= static_cast<double>(d);
                for (Index j = 0; j < d; ++j) {
                    const double dxh = static_cast<double>(gr[j]) * g[j];
                    gx[r * d + j] += static_cast<T>(rstd * (dxh - mean_dxh - xhat[j] * mean_dxh_xh));
                }
            }
        });
    };
    return finish(out, {x, gain, bias}, fn, "layer_norm");
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    // tanh(u) saved for backward.
    auto th = std::make_shared<Tensor>(Tensor::zeros(x.shape(), x.dtype()));
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        auto xv = x.data<T>();
        const auto n = static_cast<Index>(xv.size());
        Eigen::Map<const Arr> xa(xv.data(), n);
        Eigen::Map<Arr> ta(th->mutable_data<T>().data(), n);
        Eigen::Map<Arr> oa(out.mutable_data<T>().data(), n);
        ta = (static_cast<T>(kGeluC) * (xa + static_cast<T>(kGeluA) * xa.cube())).tanh();
        oa = T(0.5) * xa * (T(1) + ta);
    });
    auto fn = [th](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
            auto go = ctx.grad_out<T>();
            const auto n = static_cast<Index>(go.size());
            Eigen::Map<const Arr> ga(go.data(), n);
            Eigen::Map<const Arr> xa(ctx.input(0).data<T>().data(), n);
            Eigen::Map<const Arr> ta(th->data<T>().data(), n);
            Eigen::Map<Arr> gx(ctx.grad_in<T>(0).data(), n);
            const T c = static_cast<T>(kGeluC);
            const T a3 = T(3) * static_cast<T>(kGeluA);
            gx += ga * (T(0.5) * (T(1) + ta) + T(0.5) * xa * (T(1) - ta.square()) * c * (T(1) + a3 * xa.square()));
        });
    };
    return finish(out, {x}, fn, "gelu");
}

namespace {
template <class T>
T stable_sigmoid(T v) {
    if (v >= T(0)) {
        return T(1) / (T(1) + std::exp(-v));
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto ov = out.mutable_data<T>();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            ov[i] = stable_sigmoid(xv[i]);
        }
    });
    auto fn = [](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto y = ctx.output().data<T>();
            auto gx = ctx.grad_in<T>(0);
            for (std::size_t i = 0; i < y.size(); ++i) {
                gx[i] += go[i] * y[i] * (T(1) - y[i]);
            }
        });
    };
    return finish(out, {x}, fn, "sigmoid");
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    Tensor out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto v = x.data<T>();
        return Tensor::from_vector(shape, std::vector<T>(v.begin(), v.end()));
    });
    auto fn = [](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto gx = ctx.grad_in<T>(0);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        });
    };
    return finish(out, {x}, fn, "reshape");
}

Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) {
        throw ShapeError("transpose: rank < 2");
    }
    const Index m = x.dim(-2);
    const Index n = x.dim(-1);
    const Index batch = x.numel() / std::max<Index>(m * n, 1);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index b = 0; b < batch; ++b) {
            for (Index i = 0; i < m; ++i) {
                for (Index j = 0; j < n; ++j) {
                    ov[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
                }
            }
        }
    });
    auto fn = [m, n, batch](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto gx = ctx.grad_in<T>(0);
            for (Index b = 0; b < batch; ++b) {
                for (Index i = 0; i < m; ++i) {
                    for (Index j = 0; j < n; ++j) {
                        gx[b * m * n + i * n + j] += go[b * m * n + j * m + i];
                    }
                }
            }
        });
    };
    return finish(out, {x}, fn, "transpose");
}

namespace {
// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
    Index outer = 1;
    Index extent = 1;
    Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.extent = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}
}  // namespace

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    const int ax = normalize_axis(axis, first.size(), "concat");
    Index total = 0;
    for (const auto& p : parts) {
        require_same_dtype(parts[0], p, "concat");
        if (p.rank() != first.size()) {
            throw ShapeError("concat: rank mismatch");
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (static_cast<int>(i) != ax && p.shape()[i] != first[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " +
                                 shape_str(p.shape()));
            }
        }
        total += p.shape()[static_cast<std::size_t>(ax)];
    }
    Shape shape = first;
    shape[static_cast<std::size_t>(ax)] = total;
    const AxisSplit so = split_at(shape, ax);
    Tensor out = Tensor::zeros(shape, parts[0].dtype());
    std::vector<Index> offsets;
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ov = out.mutable_data<T>();
        Index off = 0;
        for (const auto& p : parts) {
            offsets.push_back(off);
            const AxisSplit sp = split_at(p.shape(), ax);
            auto pv = p.data<T>();
            for (Index o = 0; o < sp.outer; ++o) {
                std::copy_n(pv.data() + o * sp.extent * sp.inner, sp.extent * sp.inner,
                            ov.data() + (o * so.extent + off) * so.inner);
            }
            off += sp.extent;
        }
    });
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    auto fn = [ax, so, offsets](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            for (std::size_t pi = 0; pi < offsets.size(); ++pi) {
                auto gp = ctx.grad_in<T>(pi);
                if (gp.empty()) continue;
                const AxisSplit sp = split_at(ctx.input(pi).shape(), ax);
                for (Index o = 0; o < sp.outer; ++o) {
                    const T* src = go.data() + (o * so.extent + offsets[pi]) * so.inner;
                    T* dst = gp.data() + o * sp.extent * sp.inner;
                    for (Index i = 0; i < sp.extent * sp.inner; ++i) dst[i] += src[i];
                }
            }
        });
    };
    return finish(out, std::move(inputs), fn, "concat");
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
    const int ax = normalize_axis(axis, x.rank(), "slice");
    const AxisSplit sx = split_at(x.shape(), ax);
    if (start < 0 || length < 0 || start + length > sx.extent) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside extent " +
                         std::to_string(sx.extent));
    }
    Shape shape = x.shape();
    shape[static_cast<std::size_t>(ax)] = length;
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index o = 0; o < sx.outer; ++o) {
            std::copy_n(xv.data() + (o * sx.extent + start) * sx.inner, length * sx.inner,
                        ov.data() + o * length * sx.inner);
        }
    });
    auto fn = [sx, start, length](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto gx = ctx.grad_in<T>(0);
            for (Index o = 0; o < sx.outer; ++o) {
                const T* src = go.data() + o * length * sx.inner;
                T* dst = gx.data() + (o * sx.extent + start) * sx.inner;
                for (Index i = 0; i < length * sx.inner; ++i) dst[i] += src[i];
            }
        });
    };
    return finish(out, {x}, fn, "slice");
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    Tensor out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0.0;
        for (T v : x.data<T>()) acc += v;
        return Tensor::scalar(acc, x.dtype());
    });
    auto fn = [](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T g = ctx.grad_out<T>()[0];
            for (auto& v : ctx.grad_in<T>(0)) v += g;
        });
    };
    return finish(out, {x}, fn, "sum");
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw ShapeError("mean: empty tensor");
    }
    const double n = static_cast<double>(x.numel());
    Tensor out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0.0;
        for (T v : x.data<T>()) acc += v;
        return Tensor::scalar(acc / n, x.dtype());
    });
    auto fn = [n](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T g = static_cast<T>(ctx.grad_out<T>()[0] / n);
            for (auto& v : ctx.grad_in<T>(0)) v += g;
        });
    };
    return finish(out, {x}, fn, "mean");
}

Tensor mean_axis(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "mean_axis");
    const AxisSplit s = split_at(x.shape(), ax);
    if (s.extent == 0) {
        throw ShapeError("mean_axis: empty axis");
    }
    Shape shape = x.shape();
    shape.erase(shape.begin() + ax);
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xv = x.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index o = 0; o < s.outer; ++o) {
            for (Index i = 0; i < s.inner; ++i) {
                double acc = 0.0;
                for (Index e = 0; e < s.extent; ++e) acc += xv[(o * s.extent + e) * s.inner + i];
                ov[o * s.inner + i] = static_cast<T>(acc / static_cast<double>(s.extent));
            }
        }
    });
    auto fn = [s](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto gx = ctx.grad_in<T>(0);
            const T inv = static_cast<T>(1.0 / static_cast<double>(s.extent));
            for (Index o = 0; o < s.outer; ++o) {
                for (Index e = 0; e < s.extent; ++e) {
                    for (Index i = 0; i < s.inner; ++i) {
                        gx[(o * s.extent + e) * s.inner + i] += go[o * s.inner + i] * inv;
                    }
                }
            }
        });
    };
    return finish(out, {x}, fn, "mean_axis");
}

// ---------------------------------------------------------------------------
// Lookup

Tensor embedding(const Tensor& table, std::span<const Index> indices) {
    if (table.rank() != 2) {
        throw ShapeError("embedding: table must be [V, D]");
    }
    const Index v = table.dim(0);
    const Index d = table.dim(1);
    for (Index idx : indices) {
        if (idx < 0 || idx >= v) {
            throw ShapeError("embedding: index " + std::to_string(idx) + " outside [0, " +
                             std::to_string(v) + ")");
        }
    }
    const Index n = static_cast<Index>(indices.size());
    Tensor out = Tensor::zeros({n, d}, table.dtype());
    dispatch(table.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto tv = table.data<T>();
        auto ov = out.mutable_data<T>();
        for (Index r = 0; r < n; ++r) {
            std::copy_n(tv.data() + indices[r] * d, d, ov.data() + r * d);
        }
    });
    std::vector<Index> idx(indices.begin(), indices.end());
    auto fn = [idx, d](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto gt = ctx.grad_in<T>(0);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (Index j = 0; j < d; ++j) gt[idx[r] * d + j] += go[r * d + j];
            }
        });
    };
    return finish(out, {table}, fn, "embedding");
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const AttentionMask* mask) {
    require_same_dtype(q, k, "attention");
    require_same_dtype(q, v, "attention");
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw ShapeError("attention: q/k/v must be [B, N, D]");
    }
    const Index b = q.dim(0);
    const Index nq = q.dim(1);
    const Index d = q.dim(2);
    const Index nk = k.dim(1);
    if (k.dim(0) != b || v.dim(0) != b || k.dim(2) != d || v.dim(2) != d || v.dim(1) != nk) {
        throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
    }
    if (heads <= 0 || d % heads != 0) {
        throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    std::shared_ptr<const AttentionMask> owned;
    if (mask == nullptr) {
        owned = std::make_shared<AttentionMask>(AttentionMask::full(nq, nk));
    } else {
        if (mask->num_queries() != nq || mask->num_keys() != nk) {
            throw ShapeError("attention: mask extent mismatch");
        }
        owned = std::make_shared<AttentionMask>(*mask);
    }
    const Index dh = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    // Per (batch, head, group) dense probability blocks, concatenated.
    Index block_total = 0;
    for (const auto& g : owned->groups()) {
        block_total += static_cast<Index>(g.queries.size() * g.keys.size());
    }
    Tensor out = Tensor::zeros({b, nq, d}, q.dtype());
    auto probs = std::make_shared<Tensor>(Tensor::zeros({b * heads * block_total}, q.dtype()));

    auto gather = [](auto* dst, const auto* src, const std::vector<Index>& rows, Index stride, Index off,
                     Index width) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(src + rows[r] * stride + off, width, dst + static_cast<Index>(r) * width);
        }
    };

    dispatch(q.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* qv = q.data<T>().data();
        const T* kv = k.data<T>().data();
        const T* vv = v.data<T>().data();
        T* ov = out.mutable_data<T>().data();
        T* pv = probs->mutable_data<T>().data();
        MatR<T> qg, kg, vg, og;
        for (Index bi = 0; bi < b; ++bi) {
            for (Index h = 0; h < heads; ++h) {
                for (const auto& g : owned->groups()) {
                    const auto gq = static_cast<Index>(g.queries.size());
                    const auto gk = static_cast<Index>(g.keys.size());
                    qg.resize(gq, dh);
                    kg.resize(gk, dh);
                    vg.resize(gk, dh);
                    gather(qg.data(), qv + bi * nq * d, g.queries, d, h * dh, dh);
                    gather(kg.data(), kv + bi * nk * d, g.keys, d, h * dh, dh);
                    gather(vg.data(), vv + bi * nk * d, g.keys, d, h * dh, dh);
                    MapM<T> p(pv, gq, gk);
                    p.noalias() = (qg * kg.transpose()) * static_cast<T>(scl);
                    for (Index r = 0; r < gq; ++r) {
                        const T mx = p.row(r).maxCoeff();
                        T total = 0;
                        for (Index c = 0; c < gk; ++c) {
                            p(r, c) = std::exp(p(r, c) - mx);
                            total += p(r, c);
                        }
                        p.row(r) /= total;
                    }
                    og.noalias() = p * vg;
                    for (Index r = 0; r < gq; ++r) {
                        std::copy_n(og.data() + r * dh, dh, ov + (bi * nq + g.queries[r]) * d + h * dh);
                    }
                    pv += gq * gk;
                }
            }
        }
    });

    auto fn = [owned, probs, b, nq, nk, d, dh, heads, scl, gather](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = ctx.grad_out<T>().data();
            const T* qv = ctx.input(0).data<T>().data();
            const T* kv = ctx.input(1).data<T>().data();
            const T* vv = ctx.input(2).data<T>().data();
            auto gq_buf = ctx.grad_in<T>(0);
            auto gk_buf = ctx.grad_in<T>(1);
            auto gv_buf = ctx.grad_in<T>(2);
            const T* pv = probs->data<T>().data();
            MatR<T> qg, kg, vg, dog, dp, ds, tmp;
            for (Index bi = 0; bi < b; ++bi) {
                for (Index h = 0; h < heads; ++h) {
                    for (const auto& g : owned->groups()) {
                        const auto gq = static_cast<Index>(g.queries.size());
                        const auto gk = static_cast<Index>(g.keys.size());
                        MapC<T> p(pv, gq, gk);
                        pv += gq * gk;
                        dog.resize(gq, dh);
                        gather(dog.data(), go + bi * nq * d, g.queries, d, h * dh, dh);
                        if (!gv_buf.empty()) {
                            tmp.noalias() = p.transpose() * dog;
                            for (Index r = 0; r < gk; ++r) {
                                T* dst = gv_buf.data() + (bi * nk + g.keys[r]) * d + h * dh;
                                for (Index c = 0; c < dh; ++c) dst[c] += tmp(r, c);
                            }
                        }
                        if (gq_buf.empty() && gk_buf.empty()) {
                            continue;
                        }
                        vg.resize(gk, dh);
                        gather(vg.data(), vv + bi * nk * d, g.keys, d, h * dh, dh);
                        dp.noalias() = dog * vg.transpose();
                        ds.resize(gq, gk);
                        for (Index r = 0; r < gq; ++r) {
                            T dot = 0;
                            for (Index c = 0; c < gk; ++c) dot += dp(r, c) * p(r, c);
                            for (Index c = 0; c < gk; ++c) {
                                ds(r, c) = p(r, c) * (dp(r, c) - dot) * static_cast<T>(scl);
                            }
                        }
                        if (!gq_buf.empty()) {
                            kg.resize(gk, dh);
                            gather(kg.data(), kv + bi * nk * d, g.keys, d, h * dh, dh);
                            tmp.noalias() = ds * kg;
                            for (Index r = 0; r < gq; ++r) {
                                T* dst = gq_buf.data() + (bi * nq + g.queries[r]) * d + h * dh;
                                for (Index c = 0; c < dh; ++c) dst[c] += tmp(r, c);
                            }
                        }
                        if (!gk_buf.empty()) {
                            qg.resize(gq, dh);
                            gather(qg.data(), qv + bi * nq * d, g.queries, d, h * dh, dh);
                            tmp.noalias() = ds.transpose() * qg;
                            for (Index r = 0; r < gk; ++r) {
                                T* dst = gk_buf.data() + (bi * nk + g.keys[r]) * d + h * dh;
                                for (Index c = 0; c < dh; ++c) dst[c] += tmp(r, c);
                            }
                        }
                    }
                }
            }
        });
    };
    return finish(out, {q, k, v}, fn, "attention");
}

// ---------------------------------------------------------------------------
// Losses

Tensor huber(const Tensor& pred, const Tensor& target, double delta) {
    require_same_dtype(pred, target, "huber");
    if (pred.shape() != target.shape()) {
        throw ShapeError("huber: shape mismatch");
    }
    Tensor out = Tensor::zeros(pred.shape(), pred.dtype());
    dispatch(pred.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto p = pred.data<T>();
        auto t = target.data<T>();
        auto o = out.mutable_data<T>();
        const T dl = static_cast<T>(delta);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T r = p[i] - t[i];
            const T a = std::abs(r);
            o[i] = a <= dl ? T(0.5) * r * r : dl * (a - T(0.5) * dl);
        }
    });
    auto fn = [delta](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto p = ctx.input(0).data<T>();
            auto t = ctx.input(1).data<T>();
            auto gp = ctx.grad_in<T>(0);
            auto gt = ctx.grad_in<T>(1);
            const T dl = static_cast<T>(delta);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T r = std::clamp(p[i] - t[i], -dl, dl);
                if (!gp.empty()) gp[i] += go[i] * r;
                if (!gt.empty()) gt[i] -= go[i] * r;
            }
        });
    };
    return finish(out, {pred, target}, fn, "huber");
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    require_same_dtype(logits, targets, "bce_with_logits");
    if (logits.shape() != targets.shape()) {
        throw ShapeError("bce_with_logits: shape mismatch");
    }
    Tensor out = Tensor::zeros(logits.shape(), logits.dtype());
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = logits.data<T>();
        auto z = targets.data<T>();
        auto o = out.mutable_data<T>();
        for (std::size_t i = 0; i < x.size(); ++i) {
            o[i] = std::max(x[i], T(0)) - x[i] * z[i] + std::log1p(std::exp(-std::abs(x[i])));
        }
    });
    auto fn = [](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = ctx.grad_out<T>();
            auto x = ctx.input(0).data<T>();
            auto z = ctx.input(1).data<T>();
            auto gx = ctx.grad_in<T>(0);
            auto gz = ctx.grad_in<T>(1);
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (!gx.empty()) gx[i] += go[i] * (stable_sigmoid(x[i]) - z[i]);
                if (!gz.empty()) gz[i] -= go[i] * x[i];
            }
        });
    };
    return finish(out, {logits, targets}, fn, "bce_with_logits");
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_dtype(pred, target, "mse");
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    if (pred.numel() == 0) {
        throw ShapeError("mse: empty input");
    }
    const double n = static_cast<double>(pred.numel());
    Tensor out = dispatch(pred.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto p = pred.data<T>();
        auto t = target.data<T>();
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double r = static_cast<double>(p[i]) - t[i];
            acc += r * r;
        }
        return Tensor::scalar(acc / n, pred.dtype());
    });
    auto fn = [n](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const double g = ctx.grad_out<T>()[0];
            auto p = ctx.input(0).data<T>();
            auto t = ctx.input(1).data<T>();
            auto gp = ctx.grad_in<T>(0);
            auto gt = ctx.grad_in<T>(1);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T r = static_cast<T>(2.0 * g / n * (static_cast<double>(p[i]) - t[i]));
                if (!gp.empty()) gp[i] += r;
                if (!gt.empty()) gt[i] -= r;
            }
        });
    };
    return finish(out, {pred, target}, fn, "mse");
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const Index> labels) {
    if (logits.rank() < 1) {
        throw ShapeError("softmax_cross_entropy: rank 0 logits");
    }
    const Index c = logits.dim(-1);
    const Index rows = logits.numel() / std::max<Index>(c, 1);
    if (static_cast<Index>(labels.size()) != rows || rows == 0) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
    }
    for (Index l : labels) {
        if (l < 0 || l >= c) {
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) +
                                  " outside [0, " + std::to_string(c) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows * c));
    Tensor out = dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = logits.data<T>();
        double loss = 0.0;
        for (Index r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * c;
            const double mx = *std::max_element(xr, xr + c);
            double total = 0.0;
            for (Index j = 0; j < c; ++j) {
                (*probs)[r * c + j] = std::exp(xr[j] - mx);
                total += (*probs)[r * c + j];
            }
            for (Index j = 0; j < c; ++j) (*probs)[r * c + j] /= total;
            loss += -(xr[labels[r]] - mx - std::log(total));
        }
        return Tensor::scalar(loss / static_cast<double>(rows), logits.dtype());
    });
    std::vector<Index> lab(labels.begin(), labels.end());
    auto fn = [probs, lab, rows, c](const BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&](auto tag) {
            using T = decltype(tag);
            const double g = ctx.grad_out<T>()[0] / static_cast<double>(rows);
            auto gx = ctx.grad_in<T>(0);
            for (Index r = 0; r < rows; ++r) {
                for (Index j = 0; j < c; ++j) {
                    const double onehot = (j == lab[r]) ? 1.0 : 0.0;
                    gx[r * c + j] += static_cast<T>(g * ((*probs)[r * c + j] - onehot));
                }
            }
        });
    };
    return finish(out, {logits}, fn, "softmax_cross_entropy");
}

// ---------------------------------------------------------------------------
// Name dispatch

const std::vector<std::string>& kernel_names() {
    static const std::vector<std::string> names = {
        "matmul",  "add",     "sub",       "mul",      "scale",     "softmax",
        "layer_norm", "gelu", "sigmoid",   "reshape",  "transpose", "concat",
        "slice",   "sum",     "mean",      "mean_axis", "embedding", "attention",
        "huber",   "bce_with_logits", "mse", "softmax_cross_entropy"};
    return names;
}

Tensor kernel_forward(std::string_view name, std::span<const Tensor> in, const KernelAttrs& attrs) {
    auto need = [&](std::size_t n) {
        if (in.size() != n) {
            throw ShapeError(std::string(name) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(in.size()));
        }
    };
    if (name == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (name == "add") { need(2); return add(in[0], in[1]); }
    if (name == "sub") { need(2); return sub(in[0], in[1]); }
    if (name == "mul") { need(2); return mul(in[0], in[1]); }
    if (name == "scale") { need(1); return scale(in[0], attrs.factor); }
    if (name == "softmax") { need(1); return softmax(in[0]); }
    if (name == "layer_norm") { need(3); return layer_norm(in[0], in[1], in[2]); }
    if (name == "gelu") { need(1); return gelu(in[0]); }
    if (name == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (name == "reshape") { need(1); return reshape(in[0], attrs.shape); }
    if (name == "transpose") { need(1); return transpose(in[0]); }
    if (name == "concat") { return concat(in, attrs.axis); }
    if (name == "slice") { need(1); return slice(in[0], attrs.axis, attrs.start, attrs.length); }
    if (name == "sum") { need(1); return sum(in[0]); }
    if (name == "mean") { need(1); return mean(in[0]); }
    if (name == "mean_axis") { need(1); return mean_axis(in[0], attrs.axis); }
    if (name == "embedding") { need(1); return embedding(in[0], attrs.indices); }
    if (name == "attention") { need(3); return attention(in[0], in[1], in[2], attrs.heads, attrs.mask); }
    if (name == "huber") { need(2); return huber(in[0], in[1]); }
    if (name == "bce_with_logits") { need(2); return bce_with_logits(in[0], in[1]); }
    if (name == "mse") { need(2); return mse(in[0], in[1]); }
    if (name == "softmax_cross_entropy") { need(1); return softmax_cross_entropy(in[0], attrs.indices); }
    throw ValidationError("unknown kernel '" + std::string(name) + "'");
}

}  // namespace vdprobe::nd
