#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forge/tensor.hpp"

namespace forge {

// Integer tensors carry token ids and targets; they never require gradients.
struct IdTensor {
    Shape shape;
    std::vector<std::int32_t> data;

    IdTensor() = default;
    IdTensor(Shape s, std::vector<std::int32_t> d);
    std::int64_t numel() const { return numel_of(shape); }
};

// Boolean tensors back attention masks; 1 = keep / attend.
struct BoolTensor {
    Shape shape;
    std::vector<std::uint8_t> data;

    BoolTensor() = default;
    BoolTensor(Shape s, std::vector<std::uint8_t> d);
    std::int64_t numel() const { return numel_of(shape); }
};

enum class Activation { relu, tanh, gelu };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

// Shape of the result of broadcasting a against b (numpy rules); throws on
// incompatible extents.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double c);

// --- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor transpose_last2(const Tensor& x);

// --- core network ops --------------------------------------------------------

// Batched matrix product a[..., m, k] * b[..., k, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stabilized softmax along `axis`. Entries equal to -inf map to
// exactly 0; a slice that is entirely -inf raises NumericError.
Tensor softmax(const Tensor& x, int axis = -1);

// Per-last-axis normalization: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

// Inverted dropout: zero with probability `rate`, survivors scaled by
// 1/(1-rate). Identity when training is false or rate == 0. Mask is a pure
// function of (seed, element index).
Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed);

Tensor activation(const Tensor& x, Activation kind);
Tensor activation(const Tensor& x, const std::string& kind);

// Row gather: out[..., :] = table[ids[...], :]. Gradient scatters into rows.
Tensor embedding_lookup(const Tensor& table, const IdTensor& ids);

// Mean negative log-softmax over positions whose target != ignore_id.
// label_smoothing blends the one-hot target with the uniform distribution.
Tensor cross_entropy(const Tensor& logits, const IdTensor& targets, std::int32_t ignore_id,
                     double label_smoothing = 0.0);

// y = keep ? x : -inf, with keep broadcast against x.
Tensor masked_fill_neg_inf(const Tensor& x, const BoolTensor& keep);

// Sum of all elements as a scalar tensor.
Tensor sum_all(const Tensor& x);

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

} // namespace forge
