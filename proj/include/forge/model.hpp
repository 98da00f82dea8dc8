#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forge/attention.hpp"
#include "forge/ops.hpp"
#include "forge/positional.hpp"
#include "forge/tensor.hpp"

namespace forge {

enum class NormStyle { pre, post };

NormStyle norm_style_from_name(const std::string& name);
const char* norm_style_name(NormStyle s);

struct ModelConfig {
    std::int64_t n_layers = 2;
    std::int64_t d_model = 64;
    std::int64_t n_heads = 4;
    std::int64_t d_ff = 128;
    double dropout_rate = 0.1;
    Activation activation = Activation::relu;
    EncodingSet encodings;
    std::int64_t src_vocab = 0;
    std::int64_t tgt_vocab = 0;
    std::int64_t max_len = 100;
    NormStyle norm_style = NormStyle::pre;
    std::string attention_method = "full";
    Dtype dtype = Dtype::f32;

    void validate() const; // names the violated invariant
};

// Closed-form trainable-parameter count for a config; linear layers carry
// biases, layer norms a gain/bias pair, and pre-norm stacks end in one extra
// norm. See README "Parameter accounting" for the expanded formula.
std::int64_t parameter_count(const ModelConfig& cfg);

// Hands out per-site dropout seeds in call order within one forward pass.
struct RngCursor {
    std::uint64_t seed = 0;
    std::uint64_t n = 0;
    std::uint64_t next();
};

struct FeedForward {
    Tensor w1, b1, w2, b2;
    Activation act = Activation::relu;
    std::string prefix;

    Tensor forward(const Tensor& x) const; // w2 * act(w1 x + b1) + b2 per position
    void collect_parameters(std::vector<Parameter>& out) const;
};

// Layer norm + residual + dropout around an exchangeable inner block.
// pre:  x + dropout(inner(norm(x)))
// post: norm(x + dropout(inner(x)))
struct SublayerUnit {
    Tensor gain, bias;
    double dropout_rate = 0.0;
    NormStyle style = NormStyle::pre;
    std::string prefix;

    Tensor apply(const Tensor& x, const std::function<Tensor(const Tensor&)>& inner, bool training,
                 RngCursor& rng) const;
    void collect_parameters(std::vector<Parameter>& out) const;
};

struct EncoderLayer {
    MultiHeadAttention self_attn;
    FeedForward ffn;
    SublayerUnit sub_attn, sub_ffn;

    Tensor forward(const Tensor& x, const AttentionMask* mask, const PositionValues& pos,
                   const PositionalStrategyManager& strategies, bool training,
                   RngCursor& rng) const;
    void collect_parameters(std::vector<Parameter>& out) const;
};

struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;
    SublayerUnit sub_self, sub_cross, sub_ffn;

    Tensor forward(const Tensor& x, const Tensor& memory, const AttentionMask* self_mask,
                   const AttentionMask* cross_mask, const PositionValues& tgt_pos,
                   const PositionValues& src_pos, const PositionalStrategyManager& strategies,
                   bool training, RngCursor& rng) const;
    void collect_parameters(std::vector<Parameter>& out) const;
};

class Seq2SeqModel {
public:
    ModelConfig config;
    Tensor src_embed, tgt_embed; // [V, d_model]
    Tensor learned_table;        // [max_positions, d_model] when learned is on
    PositionalStrategyManager strategies;
    std::vector<EncoderLayer> encoder_layers;
    std::vector<DecoderLayer> decoder_layers;
    Tensor enc_norm_gain, enc_norm_bias; // final norms, pre-norm style only
    Tensor dec_norm_gain, dec_norm_bias;
    Tensor out_w, out_b; // projection to tgt_vocab logits

    // keep flags mark real (non-pad) tokens; empty means no padding.
    Tensor encode(const IdTensor& src_ids, const PositionValues& src_pos,
                  const std::vector<std::uint8_t>& src_keep, bool training,
                  std::uint64_t seed) const;

    Tensor decode(const IdTensor& tgt_ids, const PositionValues& tgt_pos, const Tensor& memory,
                  const PositionValues& src_pos, const std::vector<std::uint8_t>& src_keep,
                  const std::vector<std::uint8_t>& tgt_keep, bool training,
                  std::uint64_t seed) const;

    // Every trainable tensor exactly once, in a stable order; names mirror
    // module containment.
    std::vector<Parameter> parameters();
    std::vector<Parameter> parameters() const;
};

// Deterministic in (config, seed): identical calls produce bit-identical
// parameters.
Seq2SeqModel build_model(const ModelConfig& cfg, std::uint64_t seed);

} // namespace forge
