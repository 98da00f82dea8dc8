#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "forge/ops.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Which of the four position-encoding strategies are active, plus their
// scalar parameters. Any subset is valid, including none and all four; active
// strategies compose by plain summation at their injection points.
struct EncodingSet {
    bool sinusoidal = false;
    bool learned = false;
    bool rotary = false;
    bool alibi = false;
    double sinusoidal_base = 10000.0;
    double rotary_base = 10000.0;
    std::int64_t learned_max_positions = 100;

    bool any_additive() const { return sinusoidal || learned; }
    bool any() const { return sinusoidal || learned || rotary || alibi; }
};

// Per-token positions, real-valued so encodings can carry arbitrary numeric
// signals (timestamps, measurements). The learned strategy additionally
// requires non-negative integers inside its table.
struct PositionValues {
    std::int64_t batch = 0;
    std::int64_t length = 0;
    std::vector<double> values; // row-major [B, T]

    static PositionValues arange(std::int64_t b, std::int64_t t);
    static PositionValues from_row(std::vector<double> row); // batch of one

    double at(std::int64_t b, std::int64_t t) const {
        return values[static_cast<std::size_t>(b * length + t)];
    }
    std::span<const double> row(std::int64_t b) const {
        return std::span<const double>(values).subspan(static_cast<std::size_t>(b * length),
                                                       static_cast<std::size_t>(length));
    }
    bool rows_identical() const;
    void validate(std::int64_t expect_b, std::int64_t expect_t) const;
};

struct LearnedPositionTable {
    Tensor table; // trainable [max_positions, d_model]
    std::int64_t max_positions = 0;
    std::int64_t d_model = 0;

    static LearnedPositionTable make(std::int64_t max_positions, std::int64_t d_model, Dtype dt,
                                     std::uint64_t seed, const std::string& name);
};

// Per-head slopes 2^(-8h/H) for h = 1..H: positive and strictly decreasing.
struct AlibiSlopes {
    std::vector<double> slopes;
    static AlibiSlopes standard(std::int64_t n_heads);
};

enum class AlibiMode { causal, symmetric };

// Where an attention call sits in the architecture; decides the ALiBi mode
// (symmetric bidirectional, causal, or no bias for cross-attention).
enum class AttentionContext { encoder_self, decoder_self, cross };

// dim 2i   = sin(pos / base^(2i/d))
// dim 2i+1 = cos(pos / base^(2i/d))
// Accepts non-integer positions; d_model must be even.
Tensor sinusoidal_encoding(const PositionValues& positions, std::int64_t d_model,
                           double base = 10000.0, Dtype dt = Dtype::f32);

// Table lookup on integer positions; gradients flow into the table.
Tensor learned_encoding(const PositionValues& positions, const LearnedPositionTable& table);

// Rotates coordinate pairs (x_2i, x_2i+1) of q and k by pos * theta_i with
// theta_i = base^(-2i/d_k). Norm-preserving; position 0 is the identity.
std::pair<Tensor, Tensor> rotary_transform(const Tensor& q, const Tensor& k,
                                           const PositionValues& q_positions,
                                           const PositionValues& k_positions,
                                           double base = 10000.0);

// bias[h, i, j] = -slope_h * |pos_i - pos_j| (symmetric), or the same only
// where pos_j <= pos_i (causal; future entries stay 0 for the mask to blank).
Tensor alibi_bias(std::span<const double> q_positions, std::span<const double> k_positions,
                  const AlibiSlopes& slopes, AlibiMode mode, Dtype dt = Dtype::f32);

// Instrumentation: how often each injection hook fired on this manager.
struct HookCounters {
    std::int64_t pre_additive = 0;
    std::int64_t qk = 0;
    std::int64_t score_bias = 0;
    void reset() { pre_additive = qk = score_bias = 0; }
};

// Routes each active strategy to its injection point: additive encodings
// before the stacks, rotary onto Q/K inside attention, ALiBi onto the score
// matrix. Inactive hooks are identity.
class PositionalStrategyManager {
public:
    PositionalStrategyManager() = default;
    PositionalStrategyManager(EncodingSet set, std::int64_t d_model, std::int64_t n_heads,
                              Dtype dt, Tensor learned_table = Tensor());

    // embeddings [B, T, d] + sum of active additive encodings
    Tensor apply_pre_additive(const Tensor& embeddings, const PositionValues& positions) const;

    // rotary hook; q/k are per-head [B, H, T, d_k]
    std::pair<Tensor, Tensor> apply_qk(const Tensor& q, const Tensor& k,
                                       const PositionValues& q_pos,
                                       const PositionValues& k_pos) const;

    // ALiBi hook on scores [B, H, Tq, Tk]
    Tensor apply_score_bias(const Tensor& scores, const PositionValues& q_pos,
                            const PositionValues& k_pos, AttentionContext ctx) const;

    const EncodingSet& set() const { return set_; }
    const AlibiSlopes& slopes() const { return slopes_; }
    HookCounters& counters() const { return counters_; }

private:
    EncodingSet set_;
    std::int64_t d_model_ = 0;
    std::int64_t n_heads_ = 0;
    Dtype dtype_ = Dtype::f32;
    Tensor learned_table_; // aliases the model parameter
    AlibiSlopes slopes_;
    mutable HookCounters counters_;
};

} // namespace forge
