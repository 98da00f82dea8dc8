#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "forge/tensor.hpp"

namespace forge {

struct AdamState {
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;

    struct Moments {
        std::vector<double> m, v;
    };
    std::unordered_map<std::string, Moments> moments;
};

// One bias-corrected Adam update over every parameter. Every parameter must
// carry a populated gradient; a missing gradient names the offending path.
void adam_step(std::vector<Parameter>& params, AdamState& state);

void zero_grads(std::vector<Parameter>& params);

// Learning-rate schedule from the warmup convention:
// lr(step) = factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
double warmup_lr(std::int64_t step, std::int64_t d_model, std::int64_t warmup_steps, double factor);

} // namespace forge
