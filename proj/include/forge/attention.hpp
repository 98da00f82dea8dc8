#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "forge/ops.hpp"
#include "forge/positional.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Boolean attend/block mask broadcastable onto scores [B, H, Tq, Tk].
// Stored as [B or 1, 1, Tq, Tk]; true = attend.
struct AttentionMask {
    BoolTensor keep;

    static AttentionMask causal(std::int64_t t);
    // key_keep is [B, Tk] flattened; every query row sees the same key set.
    static AttentionMask key_padding(const std::vector<std::uint8_t>& key_keep, std::int64_t b,
                                     std::int64_t t_q, std::int64_t t_k);
    static AttentionMask combine(const AttentionMask& a, const AttentionMask& b);
};

// ALiBi injection point: called on raw scores with the positions of the call.
using ScoreBiasHook =
    std::function<Tensor(const Tensor& scores, const PositionValues& q_pos,
                         const PositionValues& k_pos)>;

struct AttentionArgs {
    Tensor q, k, v; // [B, H, T, d_k]
    const AttentionMask* mask = nullptr;
    ScoreBiasHook score_bias; // empty = no bias
    const PositionValues* q_pos = nullptr;
    const PositionValues* k_pos = nullptr;
    double dropout_rate = 0.0;
    bool training = false;
    std::uint64_t seed = 0;
};

struct AttentionResult {
    Tensor output;  // [B, H, Tq, d_k]
    Tensor weights; // [B, H, Tq, Tk], pre-dropout distribution over keys
};

// softmax(Q K^T / sqrt(d_k) + bias) V with masking before the softmax.
AttentionResult scaled_dot_product(const AttentionArgs& args);

// Pluggable attention methods, selected by name at model construction.
// "full" (dense scaled dot-product) is pre-registered.
using AttentionMethodFn = std::function<AttentionResult(const AttentionArgs&)>;

void register_attention_method(const std::string& name, AttentionMethodFn method);
const AttentionMethodFn& lookup_attention_method(const std::string& name);
std::vector<std::string> registered_attention_methods();

struct MultiHeadConfig {
    std::int64_t d_model = 0;
    std::int64_t n_heads = 0;
    double dropout_rate = 0.0;
    std::string attention_method = "full";

    std::int64_t d_k() const { return d_model / n_heads; }
    void validate(bool rotary_possible) const;
};

// Projections + head split, the positional hooks, the registered attention
// method, head merge, output projection.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(MultiHeadConfig cfg, Dtype dt, std::uint64_t seed,
                       const std::string& name_prefix);

    // Self-attention passes x_q == x_kv; cross-attention passes encoder
    // memory as x_kv.
    Tensor forward(const Tensor& x_q, const Tensor& x_kv, const AttentionMask* mask,
                   const PositionValues& q_pos, const PositionValues& k_pos,
                   const PositionalStrategyManager& strategies, AttentionContext ctx,
                   bool training, std::uint64_t seed) const;

    void collect_parameters(std::vector<Parameter>& out) const;

    MultiHeadConfig cfg;
    std::string prefix;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

} // namespace forge
