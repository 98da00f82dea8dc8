#include "forge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "forge/kernels.hpp"
#include "forge/rng.hpp"

namespace forge {

using kernels::i64;

IdTensor::IdTensor(Shape s, std::vector<std::int32_t> d) : shape(std::move(s)), data(std::move(d)) {
    FORGE_CHECK(static_cast<i64>(data.size()) == numel_of(shape), "IdTensor: ", data.size(),
                " values for shape ", shape_str(shape));
}

BoolTensor::BoolTensor(Shape s, std::vector<std::uint8_t> d) : shape(std::move(s)), data(std::move(d)) {
    FORGE_CHECK(static_cast<i64>(data.size()) == numel_of(shape), "BoolTensor: ", data.size(),
                " values for shape ", shape_str(shape));
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "gelu") return Activation::gelu;
    throw DataError(format_msg("unknown activation '", name, "'; valid kinds: relu, tanh, gelu"));
}

const char* activation_name(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::gelu: return "gelu";
    }
    return "?";
}

namespace {

template <typename Fn>
void dispatch(Dtype dt, Fn&& fn) {
    if (dt == Dtype::f32)
        fn(float{});
    else
        fn(double{});
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    FORGE_CHECK(a.dtype() == b.dtype(), op, ": dtype mismatch (", dtype_name(a.dtype()), " vs ",
                dtype_name(b.dtype()), ")");
}

// Strides of `shape` aligned to the broadcast result `out`; 0 marks a
// broadcast dimension.
std::vector<i64> aligned_strides(const Shape& shape, const Shape& out) {
    auto st = contiguous_strides(shape);
    std::vector<i64> r(out.size(), 0);
    std::size_t off = out.size() - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i)
        r[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : st[i];
    return r;
}

// Odometer walk over `out`, tracking flat offsets into two operands.
template <typename Fn>
void walk2(const Shape& out, const std::vector<i64>& sa, const std::vector<i64>& sb, Fn&& fn) {
    const i64 total = numel_of(out);
    const int r = static_cast<int>(out.size());
    std::vector<i64> idx(static_cast<std::size_t>(r), 0);
    i64 ao = 0, bo = 0;
    for (i64 f = 0; f < total; ++f) {
        fn(f, ao, bo);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            ao += sa[d];
            bo += sb[d];
            if (idx[d] < out[d]) break;
            ao -= sa[d] * out[d];
            bo -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <typename Fn>
void walk1(const Shape& out, const std::vector<i64>& sa, Fn&& fn) {
    static const std::vector<i64> zero_cache; // reused empty pattern
    std::vector<i64> zeros(out.size(), 0);
    (void)zero_cache;
    walk2(out, sa, zeros, [&](i64 f, i64 ao, i64) { fn(f, ao); });
}

enum class BinKind { add, sub, mul };

template <typename T>
T bin_eval(BinKind k, T a, T b) {
    switch (k) {
    case BinKind::add: return a + b;
    case BinKind::sub: return a - b;
    case BinKind::mul: return a * b;
    }
    return T(0);
}

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    check_same_dtype(a, b, name);
    Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    const bool same = a.shape() == out_shape && b.shape() == out_shape;

    auto backward = [kind, a, b, same](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& an = *self.parents[0];
            auto& bn = *self.parents[1];
            const T* av = an.vec<T>().data();
            const T* bv = bn.vec<T>().data();
            T* da = nullptr;
            T* db = nullptr;
            if (an.requires_grad) {
                an.ensure_grad();
                da = an.grad_vec<T>().data();
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                db = bn.grad_vec<T>().data();
            }
            if (same) {
                const i64 n = self.numel();
                if (da) {
                    if (kind == BinKind::mul)
                        kernels::for_each_index(n, [&](i64 i) { da[i] += g[i] * bv[i]; });
                    else
                        kernels::for_each_index(n, [&](i64 i) { da[i] += g[i]; });
                }
                if (db) {
                    switch (kind) {
                    case BinKind::add:
                        kernels::for_each_index(n, [&](i64 i) { db[i] += g[i]; });
                        break;
                    case BinKind::sub:
                        kernels::for_each_index(n, [&](i64 i) { db[i] -= g[i]; });
                        break;
                    case BinKind::mul:
                        kernels::for_each_index(n, [&](i64 i) { db[i] += g[i] * av[i]; });
                        break;
                    }
                }
                return;
            }
            auto sa = aligned_strides(an.shape, self.shape);
            auto sb = aligned_strides(bn.shape, self.shape);
            walk2(self.shape, sa, sb, [&](i64 f, i64 ao, i64 bo) {
                const T gv = g[f];
                if (da) da[ao] += kind == BinKind::mul ? gv * bv[bo] : gv;
                if (db) {
                    switch (kind) {
                    case BinKind::add: db[bo] += gv; break;
                    case BinKind::sub: db[bo] -= gv; break;
                    case BinKind::mul: db[bo] += gv * av[ao]; break;
                    }
                }
            });
        });
    };

    Tensor out = make_op_result(out_shape, a.dtype(), {a, b}, backward, name);
    dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* av = a.data<T>().data();
        const T* bv = b.data<T>().data();
        T* y = out.data<T>().data();
        if (same) {
            const i64 n = out.numel();
            switch (kind) {
            case BinKind::add:
                kernels::for_each_index(n, [&](i64 i) { y[i] = av[i] + bv[i]; });
                break;
            case BinKind::sub:
                kernels::for_each_index(n, [&](i64 i) { y[i] = av[i] - bv[i]; });
                break;
            case BinKind::mul:
                kernels::for_each_index(n, [&](i64 i) { y[i] = av[i] * bv[i]; });
                break;
            }
        } else {
            auto sa = aligned_strides(a.shape(), out.shape());
            auto sb = aligned_strides(b.shape(), out.shape());
            walk2(out.shape(), sa, sb,
                  [&](i64 f, i64 ao, i64 bo) { y[f] = bin_eval(kind, av[ao], bv[bo]); });
        }
    });
    return out;
}

} // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()), 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        i64 av = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        i64 bv = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (av == bv || bv == 1)
            out[i] = av;
        else if (av == 1)
            out[i] = bv;
        else
            throw DataError(format_msg("broadcast mismatch: ", shape_str(a), " vs ", shape_str(b)));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::mul, "mul"); }

Tensor mul_scalar(const Tensor& x, double c) {
    auto backward = [c](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            const T cv = static_cast<T>(c);
            kernels::for_each_index(self.numel(), [&](i64 i) { dx[i] += cv * g[i]; });
        });
    };
    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "mul_scalar");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        T* y = out.data<T>().data();
        const T cv = static_cast<T>(c);
        kernels::for_each_index(x.numel(), [&](i64 i) { y[i] = cv * xv[i]; });
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    FORGE_CHECK(numel_of(new_shape) == x.numel(), "reshape: cannot view ", shape_str(x.shape()),
                " as ", shape_str(new_shape));
    auto backward = [](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            kernels::for_each_index(self.numel(), [&](i64 i) { dx[i] += g[i]; });
        });
    };
    Tensor out = make_op_result(std::move(new_shape), x.dtype(), {x}, backward, "reshape");
    out.n().data = x.n().data; // row-major order is unchanged
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    const int r = x.rank();
    FORGE_CHECK(static_cast<int>(axes.size()) == r, "permute: got ", axes.size(), " axes for rank ",
                r);
    std::vector<bool> used(static_cast<std::size_t>(r), false);
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        int a = axes[static_cast<std::size_t>(i)];
        FORGE_CHECK(a >= 0 && a < r && !used[static_cast<std::size_t>(a)], "permute: bad axes");
        used[static_cast<std::size_t>(a)] = true;
        out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(a)];
    }
    auto in_strides = contiguous_strides(x.shape());
    std::vector<i64> walk_strides(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        walk_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];

    auto backward = [walk_strides](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            walk1(self.shape, walk_strides, [&](i64 f, i64 xo) { dx[xo] += g[f]; });
        });
    };
    Tensor out = make_op_result(out_shape, x.dtype(), {x}, backward, "permute");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        T* y = out.data<T>().data();
        walk1(out.shape(), walk_strides, [&](i64 f, i64 xo) { y[f] = xv[xo]; });
    });
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    const int r = x.rank();
    FORGE_CHECK(r >= 2, "transpose_last2: rank ", r, " tensor");
    std::vector<int> axes(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) axes[static_cast<std::size_t>(i)] = i;
    std::swap(axes[static_cast<std::size_t>(r - 2)], axes[static_cast<std::size_t>(r - 1)]);
    return permute(x, axes);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "matmul");
    FORGE_CHECK(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2, got ",
                shape_str(a.shape()), " x ", shape_str(b.shape()));
    const i64 m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
    FORGE_CHECK(k == k2, "matmul: inner extents differ: ", shape_str(a.shape()), " x ",
                shape_str(b.shape()));

    Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape out_batch = broadcast_shapes(a_batch, b_batch);
    Shape out_shape = out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    const i64 nb = numel_of(out_batch);
    std::vector<i64> a_off(static_cast<std::size_t>(nb)), b_off(static_cast<std::size_t>(nb)),
        c_off(static_cast<std::size_t>(nb));
    {
        auto sa = aligned_strides(a_batch, out_batch);
        auto sb = aligned_strides(b_batch, out_batch);
        for (auto& s : sa) s *= m * k;
        for (auto& s : sb) s *= k * n;
        walk2(out_batch, sa, sb, [&](i64 f, i64 ao, i64 bo) {
            a_off[static_cast<std::size_t>(f)] = ao;
            b_off[static_cast<std::size_t>(f)] = bo;
            c_off[static_cast<std::size_t>(f)] = f * m * n;
        });
    }
    const bool a_full = a_batch == out_batch;
    const bool b_full = b_batch == out_batch;
    const bool b_single = numel_of(b_batch) == 1;

    auto backward = [=](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const T* g = std::get<std::vector<T>>(self.grad).data();
            auto& an = *self.parents[0];
            auto& bn = *self.parents[1];
            if (an.requires_grad) {
                an.ensure_grad();
                T* da = an.grad_vec<T>().data();
                const T* bv = bn.vec<T>().data();
                if (a_full) {
                    kernels::gemm_nt_acc(g, bv, da, nb, c_off.data(), b_off.data(), a_off.data(), m,
                                         n, k);
                } else {
                    for (i64 f = 0; f < nb; ++f)
                        kernels::serial::gemm_nt_acc(g, bv, da, 1,
                                                     &c_off[static_cast<std::size_t>(f)],
                                                     &b_off[static_cast<std::size_t>(f)],
                                                     &a_off[static_cast<std::size_t>(f)], m, n, k);
                }
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                T* db = bn.grad_vec<T>().data();
                const T* av = an.vec<T>().data();
                if (b_full) {
                    kernels::gemm_tn_acc(av, g, db, nb, a_off.data(), c_off.data(), b_off.data(), m,
                                         k, n);
                } else if (b_single) {
                    kernels::gemm_tn_acc_shared(av, g, db, nb, a_off.data(), c_off.data(), m, k, n);
                } else {
                    for (i64 f = 0; f < nb; ++f)
                        kernels::serial::gemm_tn_acc(av, g, db, 1,
                                                     &a_off[static_cast<std::size_t>(f)],
                                                     &c_off[static_cast<std::size_t>(f)],
                                                     &b_off[static_cast<std::size_t>(f)], m, k, n);
                }
            }
        });
    };

    Tensor out = make_op_result(std::move(out_shape), a.dtype(), {a, b}, backward, "matmul");
    dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        kernels::gemm_nn(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(), nb,
                         a_off.data(), b_off.data(), c_off.data(), m, k, n);
    });
    return out;
}

namespace {

Tensor softmax_last(const Tensor& x) {
    const i64 cols = x.dim(-1);
    const i64 rows = x.numel() / std::max<i64>(cols, 1);
    FORGE_CHECK(cols >= 1, "softmax: empty reduction axis in ", shape_str(x.shape()));

    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        for (i64 r = 0; r < rows; ++r) {
            bool finite = false;
            for (i64 j = 0; j < cols && !finite; ++j) {
                T v = xv[r * cols + j];
                if (!(std::isinf(v) && v < T(0))) finite = true;
            }
            if (!finite)
                throw NumericError(format_msg("softmax: fully masked slice (row ", r, ")"));
        }
    });

    auto backward = [rows, cols](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            kernels::softmax_backward_rows(self.vec<T>().data(), g.data(),
                                           xn.grad_vec<T>().data(), rows, cols);
        });
    };
    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "softmax");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        kernels::softmax_rows(x.data<T>().data(), out.data<T>().data(), rows, cols);
    });
    return out;
}

} // namespace

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    FORGE_CHECK(axis >= 0 && axis < r, "softmax: axis out of range for shape ",
                shape_str(x.shape()));
    if (axis == r - 1) return softmax_last(x);
    std::vector<int> to_last, back(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        if (i != axis) to_last.push_back(i);
    to_last.push_back(axis);
    for (int i = 0; i < r; ++i) back[static_cast<std::size_t>(to_last[static_cast<std::size_t>(i)])] = i;
    return permute(softmax_last(permute(x, to_last)), back);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_same_dtype(x, gain, "layer_norm");
    check_same_dtype(x, bias, "layer_norm");
    FORGE_CHECK(eps > 0, "layer_norm: eps must be positive, got ", eps);
    const i64 d = x.dim(-1);
    FORGE_CHECK(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 && bias.dim(0) == d,
                "layer_norm: gain/bias must be [", d, "], got ", shape_str(gain.shape()), " and ",
                shape_str(bias.shape()));
    const i64 rows = x.numel() / d;

    Tensor out;
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        auto means = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
        auto rstds = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));

        auto backward = [rows, d, means, rstds](TensorNode& self) {
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            auto& gn = *self.parents[1];
            auto& bn = *self.parents[2];
            const T* xv = xn.vec<T>().data();
            const T* gainv = gn.vec<T>().data();
            if (xn.requires_grad) {
                xn.ensure_grad();
                kernels::layer_norm_backward_rows(xv, gainv, g.data(), means->data(), rstds->data(),
                                                  xn.grad_vec<T>().data(), rows, d);
            }
            if (gn.requires_grad || bn.requires_grad) {
                T* dgain = nullptr;
                T* dbias = nullptr;
                if (gn.requires_grad) {
                    gn.ensure_grad();
                    dgain = gn.grad_vec<T>().data();
                }
                if (bn.requires_grad) {
                    bn.ensure_grad();
                    dbias = bn.grad_vec<T>().data();
                }
                for (i64 r = 0; r < rows; ++r) {
                    const T mean = (*means)[static_cast<std::size_t>(r)];
                    const T rstd = (*rstds)[static_cast<std::size_t>(r)];
                    const T* xr = xv + r * d;
                    const T* gr = g.data() + r * d;
                    for (i64 j = 0; j < d; ++j) {
                        if (dgain) dgain[j] += gr[j] * (xr[j] - mean) * rstd;
                        if (dbias) dbias[j] += gr[j];
                    }
                }
            }
        };

        out = make_op_result(x.shape(), x.dtype(), {x, gain, bias}, backward, "layer_norm");
        kernels::layer_norm_rows(x.data<T>().data(), gain.data<T>().data(), bias.data<T>().data(),
                                 out.data<T>().data(), rows, d, static_cast<T>(eps), means->data(),
                                 rstds->data());
    });
    return out;
}

namespace {
constexpr std::uint64_t kDropoutStream = 0xD70Full;
}

Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
    FORGE_CHECK(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1), got ", rate);
    if (!training || rate == 0.0) return x;

    const double inv = 1.0 / (1.0 - rate);
    auto backward = [rate, inv, seed](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            kernels::for_each_index(self.numel(), [&](i64 i) {
                const bool keep =
                    to_unit(rng_hash(seed, kDropoutStream, static_cast<std::uint64_t>(i))) >= rate;
                if (keep) dx[i] += static_cast<T>(inv) * g[i];
            });
        });
    };
    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "dropout");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        T* y = out.data<T>().data();
        kernels::for_each_index(x.numel(), [&](i64 i) {
            const bool keep =
                to_unit(rng_hash(seed, kDropoutStream, static_cast<std::uint64_t>(i))) >= rate;
            y[i] = keep ? static_cast<T>(inv) * xv[i] : T(0);
        });
    });
    return out;
}

namespace {

template <typename T>
T gelu_fwd(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865476)));
}

template <typename T>
T gelu_grad(T x) {
    const T phi = std::exp(T(-0.5) * x * x) * T(0.3989422804014327); // pdf
    const T Phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
    return Phi + x * phi;
}

} // namespace

Tensor activation(const Tensor& x, Activation kind) {
    auto backward = [kind](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            const T* xv = xn.vec<T>().data();
            const T* yv = self.vec<T>().data();
            switch (kind) {
            case Activation::relu:
                kernels::for_each_index(self.numel(), [&](i64 i) {
                    if (xv[i] > T(0)) dx[i] += g[i];
                });
                break;
            case Activation::tanh:
                kernels::for_each_index(self.numel(),
                                        [&](i64 i) { dx[i] += g[i] * (T(1) - yv[i] * yv[i]); });
                break;
            case Activation::gelu:
                kernels::for_each_index(self.numel(), [&](i64 i) { dx[i] += g[i] * gelu_grad(xv[i]); });
                break;
            }
        });
    };
    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "activation");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        T* y = out.data<T>().data();
        switch (kind) {
        case Activation::relu:
            kernels::for_each_index(x.numel(), [&](i64 i) { y[i] = xv[i] > T(0) ? xv[i] : T(0); });
            break;
        case Activation::tanh:
            kernels::for_each_index(x.numel(), [&](i64 i) { y[i] = std::tanh(xv[i]); });
            break;
        case Activation::gelu:
            kernels::for_each_index(x.numel(), [&](i64 i) { y[i] = gelu_fwd(xv[i]); });
            break;
        }
    });
    return out;
}

Tensor activation(const Tensor& x, const std::string& kind) {
    return activation(x, activation_from_name(kind));
}

Tensor embedding_lookup(const Tensor& table, const IdTensor& ids) {
    FORGE_CHECK(table.rank() == 2, "embedding_lookup: table must be [V, d], got ",
                shape_str(table.shape()));
    const i64 v = table.dim(0), d = table.dim(1);
    for (auto id : ids.data)
        FORGE_CHECK(id >= 0 && id < v, "embedding_lookup: id ", id, " out of range [0, ", v, ")");

    Shape out_shape = ids.shape;
    out_shape.push_back(d);
    const i64 rows = ids.numel();
    auto id_copy = std::make_shared<std::vector<std::int32_t>>(ids.data);

    auto backward = [d, rows, id_copy](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& tn = *self.parents[0];
            if (!tn.requires_grad) return;
            tn.ensure_grad();
            T* dt = tn.grad_vec<T>().data();
            // Serial: repeated ids accumulate into the same row.
            for (i64 r = 0; r < rows; ++r) {
                const i64 row = (*id_copy)[static_cast<std::size_t>(r)];
                for (i64 j = 0; j < d; ++j) dt[row * d + j] += g[r * d + j];
            }
        });
    };
    Tensor out = make_op_result(std::move(out_shape), table.dtype(), {table}, backward,
                                "embedding_lookup");
    dispatch(table.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* tv = table.data<T>().data();
        T* y = out.data<T>().data();
        kernels::for_each_index(rows, [&](i64 r) {
            const i64 row = (*id_copy)[static_cast<std::size_t>(r)];
            for (i64 j = 0; j < d; ++j) y[r * d + j] = tv[row * d + j];
        });
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const IdTensor& targets, std::int32_t ignore_id,
                     double label_smoothing) {
    FORGE_CHECK(logits.rank() >= 1, "cross_entropy: logits must have a class axis");
    const i64 v = logits.dim(-1);
    const i64 rows = logits.numel() / v;
    FORGE_CHECK(targets.numel() == rows, "cross_entropy: ", targets.numel(), " targets for ", rows,
                " rows");
    FORGE_CHECK(label_smoothing >= 0.0 && label_smoothing < 1.0,
                "cross_entropy: label_smoothing must be in [0, 1)");

    i64 n_valid = 0;
    for (auto t : targets.data) {
        if (t == ignore_id) continue;
        FORGE_CHECK(t >= 0 && t < v, "cross_entropy: target ", t, " out of range [0, ", v, ")");
        ++n_valid;
    }
    if (n_valid == 0) throw DataError("cross_entropy: all positions ignored");

    auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.data);
    const double eps = label_smoothing;

    auto backward = [v, rows, n_valid, ignore_id, eps, tgt](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const T gscale = std::get<std::vector<T>>(self.grad)[0] / static_cast<T>(n_valid);
            auto& ln = *self.parents[0];
            if (!ln.requires_grad) return;
            ln.ensure_grad();
            T* dl = ln.grad_vec<T>().data();
            const T* lv = ln.vec<T>().data();
            kernels::for_each_index(rows, [&](i64 r) {
                const std::int32_t t = (*tgt)[static_cast<std::size_t>(r)];
                if (t == ignore_id) return;
                const T* row = lv + r * v;
                T mx = row[0];
                for (i64 j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                T sum = T(0);
                for (i64 j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
                const T inv_sum = T(1) / sum;
                const T uniform = static_cast<T>(eps) / static_cast<T>(v);
                for (i64 j = 0; j < v; ++j) {
                    T p = std::exp(row[j] - mx) * inv_sum;
                    T q = uniform + (j == t ? T(1) - static_cast<T>(eps) : T(0));
                    dl[r * v + j] += (p - q) * gscale;
                }
            });
        });
    };

    Tensor out = make_op_result(Shape{}, logits.dtype(), {logits}, backward, "cross_entropy");
    dispatch(logits.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* lv = logits.data<T>().data();
        std::vector<double> row_loss(static_cast<std::size_t>(rows), 0.0);
        kernels::for_each_index(rows, [&](i64 r) {
            const std::int32_t t = (*tgt)[static_cast<std::size_t>(r)];
            if (t == ignore_id) return;
            const T* row = lv + r * v;
            T mx = row[0];
            for (i64 j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0, mean_logit = 0.0;
            for (i64 j = 0; j < v; ++j) {
                sum += std::exp(static_cast<double>(row[j] - mx));
                mean_logit += static_cast<double>(row[j]);
            }
            mean_logit /= static_cast<double>(v);
            const double lse = std::log(sum) + static_cast<double>(mx);
            row_loss[static_cast<std::size_t>(r)] =
                (1.0 - eps) * (lse - static_cast<double>(row[t])) + eps * (lse - mean_logit);
        });
        double total = 0.0;
        for (double l : row_loss) total += l;
        if (out.dtype() == Dtype::f32)
            out.data<float>()[0] = static_cast<float>(total / static_cast<double>(n_valid));
        else
            out.data<double>()[0] = total / static_cast<double>(n_valid);
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    auto backward = [](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const T g = std::get<std::vector<T>>(self.grad)[0];
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            kernels::for_each_index(xn.numel(), [&](i64 i) { dx[i] += g; });
        });
    };
    Tensor out = make_op_result(Shape{}, x.dtype(), {x}, backward, "sum_all");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        double total = 0.0;
        for (i64 i = 0; i < x.numel(); ++i) total += static_cast<double>(xv[i]);
        if (out.dtype() == Dtype::f32)
            out.data<float>()[0] = static_cast<float>(total);
        else
            out.data<double>()[0] = total;
    });
    return out;
}

Tensor masked_fill_neg_inf(const Tensor& x, const BoolTensor& keep) {
    Shape bshape = broadcast_shapes(x.shape(), keep.shape);
    FORGE_CHECK(bshape == x.shape(), "masked_fill: mask ", shape_str(keep.shape),
                " does not broadcast onto ", shape_str(x.shape()));
    auto mask = std::make_shared<BoolTensor>(keep);
    auto strides = aligned_strides(keep.shape, x.shape());

    auto backward = [mask, strides](TensorNode& self) {
        dispatch(self.dtype, [&](auto z) {
            using T = decltype(z);
            const auto& g = std::get<std::vector<T>>(self.grad);
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            xn.ensure_grad();
            T* dx = xn.grad_vec<T>().data();
            walk1(self.shape, strides, [&](i64 f, i64 mo) {
                if (mask->data[static_cast<std::size_t>(mo)]) dx[f] += g[f];
            });
        });
    };
    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "masked_fill");
    dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* xv = x.data<T>().data();
        T* y = out.data<T>().data();
        const T ninf = -std::numeric_limits<T>::infinity();
        walk1(out.shape(), strides,
              [&](i64 f, i64 mo) { y[f] = mask->data[static_cast<std::size_t>(mo)] ? xv[f] : ninf; });
    });
    return out;
}

} // namespace forge
