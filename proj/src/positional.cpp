#include "forge/positional.hpp"

#include <cmath>

#include "forge/kernels.hpp"
#include "forge/rng.hpp"

namespace forge {

using kernels::i64;

PositionValues PositionValues::arange(std::int64_t b, std::int64_t t) {
    PositionValues p;
    p.batch = b;
    p.length = t;
    p.values.resize(static_cast<std::size_t>(b * t));
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < t; ++j)
            p.values[static_cast<std::size_t>(i * t + j)] = static_cast<double>(j);
    return p;
}

PositionValues PositionValues::from_row(std::vector<double> row) {
    PositionValues p;
    p.batch = 1;
    p.length = static_cast<std::int64_t>(row.size());
    p.values = std::move(row);
    return p;
}

bool PositionValues::rows_identical() const {
    for (std::int64_t b = 1; b < batch; ++b)
        for (std::int64_t t = 0; t < length; ++t)
            if (at(b, t) != at(0, t)) return false;
    return true;
}

void PositionValues::validate(std::int64_t expect_b, std::int64_t expect_t) const {
    FORGE_CHECK(batch == expect_b && length == expect_t, "position values are [", batch, ", ",
                length, "], expected [", expect_b, ", ", expect_t, "]");
    for (double v : values)
        FORGE_CHECK(std::isfinite(v), "position values must be finite, got ", v);
}

LearnedPositionTable LearnedPositionTable::make(std::int64_t max_positions, std::int64_t d_model,
                                                Dtype dt, std::uint64_t seed,
                                                const std::string& name) {
    FORGE_CHECK(max_positions >= 1, "learned_max_positions must be >= 1, got ", max_positions);
    LearnedPositionTable t;
    t.max_positions = max_positions;
    t.d_model = d_model;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    t.table = Tensor::uniform({max_positions, d_model}, -bound, bound, seed, fnv1a(name), dt, true);
    return t;
}

AlibiSlopes AlibiSlopes::standard(std::int64_t n_heads) {
    FORGE_CHECK(n_heads >= 1, "alibi slopes need at least one head");
    AlibiSlopes s;
    s.slopes.resize(static_cast<std::size_t>(n_heads));
    for (std::int64_t h = 1; h <= n_heads; ++h)
        s.slopes[static_cast<std::size_t>(h - 1)] =
            std::pow(2.0, -8.0 * static_cast<double>(h) / static_cast<double>(n_heads));
    return s;
}

Tensor sinusoidal_encoding(const PositionValues& positions, std::int64_t d_model, double base,
                           Dtype dt) {
    FORGE_CHECK(d_model % 2 == 0, "sinusoidal encoding requires an even d_model, got ", d_model);
    const i64 b = positions.batch, t = positions.length, half = d_model / 2;
    Tensor out = Tensor::zeros({b, t, d_model}, dt);

    std::vector<double> inv_freq(static_cast<std::size_t>(half));
    for (i64 i = 0; i < half; ++i)
        inv_freq[static_cast<std::size_t>(i)] =
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));

    auto fill = [&](auto* y) {
        kernels::for_each_index(b * t, [&](i64 row) {
            const double pos = positions.values[static_cast<std::size_t>(row)];
            auto* dst = y + row * d_model;
            for (i64 i = 0; i < half; ++i) {
                const double angle = pos * inv_freq[static_cast<std::size_t>(i)];
                dst[2 * i] = static_cast<std::remove_reference_t<decltype(y[0])>>(std::sin(angle));
                dst[2 * i + 1] =
                    static_cast<std::remove_reference_t<decltype(y[0])>>(std::cos(angle));
            }
        });
    };
    if (dt == Dtype::f32)
        fill(out.data<float>().data());
    else
        fill(out.data<double>().data());
    return out;
}

Tensor learned_encoding(const PositionValues& positions, const LearnedPositionTable& table) {
    const i64 b = positions.batch, t = positions.length;
    std::vector<std::int32_t> ids(static_cast<std::size_t>(b * t));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double v = positions.values[i];
        FORGE_CHECK(v == std::floor(v) && v >= 0.0 && v < static_cast<double>(table.max_positions),
                    "learned positional encoding requires integer positions in [0, ",
                    table.max_positions, "); got ", v);
        ids[i] = static_cast<std::int32_t>(v);
    }
    return embedding_lookup(table.table, IdTensor({b, t}, std::move(ids)));
}

namespace {

template <typename T>
void rotate_buffer(const T* src, T* dst, const std::vector<double>& positions, i64 batch, i64 h,
                   i64 t, i64 d_k, const std::vector<double>& thetas, double sign) {
    const i64 half = d_k / 2;
    kernels::for_each_index(batch * h * t, [&](i64 row) {
        const i64 b_i = row / (h * t);
        const i64 t_i = row % t;
        const double pos = positions[static_cast<std::size_t>(b_i * t + t_i)];
        const T* in = src + row * d_k;
        T* out = dst + row * d_k;
        for (i64 i = 0; i < half; ++i) {
            const double angle = sign * pos * thetas[static_cast<std::size_t>(i)];
            const double c = std::cos(angle), s = std::sin(angle);
            const double x0 = static_cast<double>(in[2 * i]);
            const double x1 = static_cast<double>(in[2 * i + 1]);
            out[2 * i] = static_cast<T>(c * x0 - s * x1);
            out[2 * i + 1] = static_cast<T>(s * x0 + c * x1);
        }
    });
}

Tensor rotate_pairs(const Tensor& x, std::shared_ptr<const std::vector<double>> positions,
                    i64 batch, i64 t, double base) {
    const i64 d_k = x.dim(-1);
    FORGE_CHECK(d_k % 2 == 0, "rotary transform requires an even head dimension, got ", d_k);
    FORGE_CHECK(x.rank() == 4, "rotary transform expects [B, H, T, d_k], got ",
                shape_str(x.shape()));
    const i64 h = x.dim(1);
    FORGE_CHECK(x.dim(0) == batch && x.dim(2) == t, "rotary positions are [", batch, ", ", t,
                "] but q/k is ", shape_str(x.shape()));

    auto thetas = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d_k / 2));
    for (i64 i = 0; i < d_k / 2; ++i)
        (*thetas)[static_cast<std::size_t>(i)] =
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d_k));

    // Rotation is orthogonal: the adjoint rotates the gradient by -angle.
    auto backward = [=](TensorNode& self) {
        auto& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        auto run = [&](auto tag) {
            using T = decltype(tag);
            const auto& g = std::get<std::vector<T>>(self.grad);
            std::vector<T> tmp(g.size());
            rotate_buffer(g.data(), tmp.data(), *positions, batch, h, t, d_k, *thetas, -1.0);
            auto& dx = xn.grad_vec<T>();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += tmp[i];
        };
        if (self.dtype == Dtype::f32)
            run(float{});
        else
            run(double{});
    };

    Tensor out = make_op_result(x.shape(), x.dtype(), {x}, backward, "rotary");
    if (x.dtype() == Dtype::f32)
        rotate_buffer(x.data<float>().data(), out.data<float>().data(), *positions, batch, h, t,
                      d_k, *thetas, 1.0);
    else
        rotate_buffer(x.data<double>().data(), out.data<double>().data(), *positions, batch, h, t,
                      d_k, *thetas, 1.0);
    return out;
}

} // namespace

std::pair<Tensor, Tensor> rotary_transform(const Tensor& q, const Tensor& k,
                                           const PositionValues& q_positions,
                                           const PositionValues& k_positions, double base) {
    auto qp = std::make_shared<const std::vector<double>>(q_positions.values);
    auto kp = std::make_shared<const std::vector<double>>(k_positions.values);
    Tensor q_rot = rotate_pairs(q, qp, q_positions.batch, q_positions.length, base);
    Tensor k_rot = rotate_pairs(k, kp, k_positions.batch, k_positions.length, base);
    return {q_rot, k_rot};
}

Tensor alibi_bias(std::span<const double> q_positions, std::span<const double> k_positions,
                  const AlibiSlopes& slopes, AlibiMode mode, Dtype dt) {
    const i64 h = static_cast<i64>(slopes.slopes.size());
    const i64 tq = static_cast<i64>(q_positions.size());
    const i64 tk = static_cast<i64>(k_positions.size());
    FORGE_CHECK(h >= 1, "alibi_bias: need at least one head");
    Tensor out = Tensor::zeros({h, tq, tk}, dt);

    auto fill = [&](auto* y) {
        using T = std::remove_reference_t<decltype(y[0])>;
        for (i64 hi = 0; hi < h; ++hi) {
            const double slope = slopes.slopes[static_cast<std::size_t>(hi)];
            for (i64 i = 0; i < tq; ++i)
                for (i64 j = 0; j < tk; ++j) {
                    const double pi = q_positions[static_cast<std::size_t>(i)];
                    const double pj = k_positions[static_cast<std::size_t>(j)];
                    double v = 0.0;
                    if (mode == AlibiMode::symmetric || pj <= pi) v = -slope * std::abs(pi - pj);
                    y[(hi * tq + i) * tk + j] = static_cast<T>(v);
                }
        }
    };
    if (dt == Dtype::f32)
        fill(out.data<float>().data());
    else
        fill(out.data<double>().data());
    return out;
}

PositionalStrategyManager::PositionalStrategyManager(EncodingSet set, std::int64_t d_model,
                                                     std::int64_t n_heads, Dtype dt,
                                                     Tensor learned_table)
    : set_(set), d_model_(d_model), n_heads_(n_heads), dtype_(dt),
      learned_table_(std::move(learned_table)) {
    if (set_.alibi) slopes_ = AlibiSlopes::standard(n_heads);
    if (set_.learned)
        FORGE_CHECK(learned_table_.defined(),
                    "learned encoding enabled but no position table provided");
}

Tensor PositionalStrategyManager::apply_pre_additive(const Tensor& embeddings,
                                                     const PositionValues& positions) const {
    ++counters_.pre_additive;
    if (!set_.any_additive()) return embeddings;
    positions.validate(embeddings.dim(0), embeddings.dim(1));

    // Sum the active encodings first: addition of the two encoding tensors is
    // commutative bit-for-bit, so strategy order cannot change the result.
    Tensor enc;
    if (set_.sinusoidal)
        enc = sinusoidal_encoding(positions, d_model_, set_.sinusoidal_base, embeddings.dtype());
    if (set_.learned) {
        LearnedPositionTable view{learned_table_, set_.learned_max_positions, d_model_};
        Tensor learned = learned_encoding(positions, view);
        enc = enc.defined() ? add(enc, learned) : learned;
    }
    return add(embeddings, enc);
}

std::pair<Tensor, Tensor> PositionalStrategyManager::apply_qk(const Tensor& q, const Tensor& k,
                                                              const PositionValues& q_pos,
                                                              const PositionValues& k_pos) const {
    ++counters_.qk;
    if (!set_.rotary) return {q, k};
    return rotary_transform(q, k, q_pos, k_pos, set_.rotary_base);
}

Tensor PositionalStrategyManager::apply_score_bias(const Tensor& scores,
                                                   const PositionValues& q_pos,
                                                   const PositionValues& k_pos,
                                                   AttentionContext ctx) const {
    ++counters_.score_bias;
    if (!set_.alibi || ctx == AttentionContext::cross) return scores;
    const AlibiMode mode =
        ctx == AttentionContext::encoder_self ? AlibiMode::symmetric : AlibiMode::causal;

    if (q_pos.rows_identical() && k_pos.rows_identical()) {
        Tensor bias = alibi_bias(q_pos.row(0), k_pos.row(0), slopes_, mode, scores.dtype());
        return add(scores, bias); // broadcast over batch
    }
    // Per-row positions: stack per-batch bias blocks.
    const i64 b = scores.dim(0), h = scores.dim(1), tq = scores.dim(2), tk = scores.dim(3);
    Tensor bias = Tensor::zeros({b, h, tq, tk}, scores.dtype());
    for (i64 bi = 0; bi < b; ++bi) {
        Tensor block = alibi_bias(q_pos.row(bi), k_pos.row(bi), slopes_, mode, scores.dtype());
        const i64 n = h * tq * tk;
        if (scores.dtype() == Dtype::f32) {
            auto dst = bias.data<float>();
            auto src = block.data<float>();
            for (i64 i = 0; i < n; ++i) dst[static_cast<std::size_t>(bi * n + i)] = src[static_cast<std::size_t>(i)];
        } else {
            auto dst = bias.data<double>();
            auto src = block.data<double>();
            for (i64 i = 0; i < n; ++i) dst[static_cast<std::size_t>(bi * n + i)] = src[static_cast<std::size_t>(i)];
        }
    }
    return add(scores, bias);
}

} // namespace forge
