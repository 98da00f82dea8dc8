#include <cmath>

#include "doctest.h"

#include "forge/ops.hpp"
#include "forge/optim.hpp"
#include "helpers.hpp"

using namespace forge;

TEST_CASE("adam: zero gradient leaves parameter unchanged") {
    Tensor w = Tensor::from_values({3}, {1.0, -2.0, 0.5}, Dtype::f64, true);
    w.n().ensure_grad();
    std::vector<Parameter> params{{"w", w}};
    AdamState st;
    adam_step(params, st);
    CHECK(w.at_flat(0) == doctest::Approx(1.0));
    CHECK(w.at_flat(1) == doctest::Approx(-2.0));
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step with unit gradient moves by ~lr") {
    Tensor w = Tensor::from_values({1}, {0.0}, Dtype::f64, true);
    w.n().ensure_grad();
    w.n().grad_vec<double>()[0] = 1.0;
    std::vector<Parameter> params{{"w", w}};
    AdamState st;
    st.lr = 0.05;
    adam_step(params, st);
    // bias-corrected m-hat = g, v-hat = g^2, so the update is lr/(1+eps).
    CHECK(std::abs(std::abs(w.at_flat(0)) - st.lr) < 1e-6);
}

TEST_CASE("adam: descends (w-3)^2 with shrinking error windows") {
    Tensor w = Tensor::from_values({1}, {0.0}, Dtype::f64, true);
    std::vector<Parameter> params{{"w", w}};
    AdamState st;
    st.lr = 0.1;

    std::vector<double> window_err;
    double worst_in_window = 0.0;
    for (int step = 1; step <= 50; ++step) {
        Tensor diff = sub(w, Tensor::from_values({1}, {3.0}, Dtype::f64));
        Tensor loss = sum_all(mul(diff, diff));
        zero_grads(params);
        loss.backward();
        adam_step(params, st);
        worst_in_window = std::max(worst_in_window, std::abs(w.at_flat(0) - 3.0));
        if (step % 10 == 0) {
            window_err.push_back(worst_in_window);
            worst_in_window = 0.0;
        }
    }
    for (std::size_t i = 1; i < window_err.size(); ++i) CHECK(window_err[i] < window_err[i - 1]);
}

TEST_CASE("adam: missing gradient names the parameter path") {
    Tensor w = Tensor::zeros({2}, Dtype::f32, true);
    std::vector<Parameter> params{{"encoder.layer0.ffn.w1", w}};
    AdamState st;
    CHECK_THROWS_WITH_AS(adam_step(params, st),
                         doctest::Contains("encoder.layer0.ffn.w1"), DataError);
}

TEST_CASE("warmup schedule shape") {
    // Rises linearly to the warmup corner then decays as 1/sqrt(step).
    double before = warmup_lr(200, 64, 400, 1.0);
    double peak = warmup_lr(400, 64, 400, 1.0);
    double after = warmup_lr(1600, 64, 400, 1.0);
    CHECK(before < peak);
    CHECK(after < peak);
    CHECK(peak == doctest::Approx(std::pow(64.0, -0.5) / std::sqrt(400.0)));
}
