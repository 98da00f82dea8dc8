#include "forge/optim.hpp"

#include <algorithm>
#include <cmath>

namespace forge {

void adam_step(std::vector<Parameter>& params, AdamState& state) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (auto& p : params) {
        auto& node = p.tensor.n();
        if (!node.has_grad())
            throw DataError(format_msg("adam_step: missing gradient for parameter '", p.name, "'"));
        auto& mom = state.moments[p.name];
        const std::size_t n = static_cast<std::size_t>(node.numel());
        if (mom.m.empty()) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
        }
        auto update = [&](auto* data, const auto* grad) {
            for (std::size_t i = 0; i < n; ++i) {
                const double g = static_cast<double>(grad[i]);
                mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
                mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
                const double mhat = mom.m[i] / bc1;
                const double vhat = mom.v[i] / bc2;
                data[i] -= static_cast<std::remove_reference_t<decltype(data[i])>>(
                    state.lr * mhat / (std::sqrt(vhat) + state.eps));
            }
        };
        if (node.dtype == Dtype::f32)
            update(node.vec<float>().data(), node.grad_vec<float>().data());
        else
            update(node.vec<double>().data(), node.grad_vec<double>().data());
    }
}

void zero_grads(std::vector<Parameter>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

double warmup_lr(std::int64_t step, std::int64_t d_model, std::int64_t warmup_steps, double factor) {
    const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
    const double w = static_cast<double>(std::max<std::int64_t>(warmup_steps, 1));
    return factor * std::pow(static_cast<double>(d_model), -0.5) *
           std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

} // namespace forge
