#pragma once

// Shared test utilities. The finite-difference machinery here is the
// independent oracle used to validate analytic gradients; it only evaluates
// forward passes and never touches the backward implementation.

#include <cmath>
#include <functional>
#include <vector>

#include "forge/ops.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace testutil {

using forge::Tensor;

inline double get_flat(const Tensor& t, std::int64_t i) { return t.at_flat(i); }

inline void set_flat(Tensor& t, std::int64_t i, double v) {
    if (t.dtype() == forge::Dtype::f32)
        t.data<float>()[static_cast<std::size_t>(i)] = static_cast<float>(v);
    else
        t.data<double>()[static_cast<std::size_t>(i)] = v;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

// Random float64 leaf with entries in +-(lo, hi); keeps values away from
// activation kinks when lo > 0.
inline Tensor random_leaf(forge::Shape shape, std::uint64_t seed, std::uint64_t stream,
                          double lo = 0.1, double hi = 2.0, bool requires_grad = true) {
    auto t = Tensor::zeros(shape, forge::Dtype::f64, requires_grad);
    auto d = t.data<double>();
    forge::CounterRng rng(seed, stream);
    for (auto& v : d) {
        double mag = rng.uniform(lo, hi);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// Deterministic projection weights so the scalarized loss exercises every
// output coordinate of the checked op.
inline Tensor loss_weights(const forge::Shape& shape, std::uint64_t seed) {
    return random_leaf(shape, seed, 0xF00D, 0.2, 1.0, false);
}

inline Tensor scalar_loss(const Tensor& y, const Tensor& w) {
    return forge::sum_all(forge::mul(y, w));
}

// Central finite difference of `loss_fn` w.r.t. coordinate `flat` of `leaf`.
inline double central_diff(const std::function<double()>& loss_fn, Tensor& leaf, std::int64_t flat,
                           double h = 1e-5) {
    forge::NoGradGuard ng;
    const double x0 = get_flat(leaf, flat);
    set_flat(leaf, flat, x0 + h);
    const double fp = loss_fn();
    set_flat(leaf, flat, x0 - h);
    const double fm = loss_fn();
    set_flat(leaf, flat, x0);
    return (fp - fm) / (2.0 * h);
}

// Checks every coordinate of every leaf (or a strided sample for big leaves).
// `build_loss` must construct the graph from the leaves and return the scalar
// loss tensor. Returns the max relative error observed.
inline double grad_check(const std::function<Tensor()>& build_loss, std::vector<Tensor> leaves,
                         std::int64_t max_coords_per_leaf = 256, double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    Tensor loss = build_loss();
    loss.backward();

    auto loss_value = [&]() { return build_loss().item(); };

    double worst = 0.0;
    for (auto& leaf : leaves) {
        Tensor g = leaf.grad();
        const std::int64_t n = leaf.numel();
        const std::int64_t stride = std::max<std::int64_t>(1, n / max_coords_per_leaf);
        for (std::int64_t i = 0; i < n; i += stride) {
            const double analytic = g.defined() ? g.at_flat(i) : 0.0;
            const double numeric = central_diff(loss_value, leaf, i, h);
            worst = std::max(worst, rel_err(analytic, numeric));
        }
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(a.at_flat(i) - b.at_flat(i)));
    return worst;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a.at_flat(i) != b.at_flat(i)) return false;
    return true;
}

} // namespace testutil
