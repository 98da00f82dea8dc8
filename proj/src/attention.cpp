#include "forge/attention.hpp"

#include <cmath>
#include <mutex>

#include "forge/kernels.hpp"
#include <unordered_map>

#include "forge/rng.hpp"

namespace forge {

using kernels::i64;

AttentionMask AttentionMask::causal(std::int64_t t) {
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(t * t), 0);
    for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j <= i; ++j) keep[static_cast<std::size_t>(i * t + j)] = 1;
    return AttentionMask{BoolTensor({1, 1, t, t}, std::move(keep))};
}

AttentionMask AttentionMask::key_padding(const std::vector<std::uint8_t>& key_keep, std::int64_t b,
                                         std::int64_t t_q, std::int64_t t_k) {
    FORGE_CHECK(static_cast<i64>(key_keep.size()) == b * t_k, "key_padding: ", key_keep.size(),
                " flags for [", b, ", ", t_k, "]");
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(b * t_q * t_k));
    for (i64 bi = 0; bi < b; ++bi)
        for (i64 i = 0; i < t_q; ++i)
            for (i64 j = 0; j < t_k; ++j)
                keep[static_cast<std::size_t>((bi * t_q + i) * t_k + j)] =
                    key_keep[static_cast<std::size_t>(bi * t_k + j)];
    return AttentionMask{BoolTensor({b, 1, t_q, t_k}, std::move(keep))};
}

AttentionMask AttentionMask::combine(const AttentionMask& a, const AttentionMask& b) {
    Shape shape = broadcast_shapes(a.keep.shape, b.keep.shape);
    const i64 n = numel_of(shape);
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n));
    // walk both via simple odometer over the broadcast shape
    auto sa = contiguous_strides(a.keep.shape);
    auto sb = contiguous_strides(b.keep.shape);
    std::vector<i64> wa(shape.size(), 0), wb(shape.size(), 0);
    const std::size_t off_a = shape.size() - a.keep.shape.size();
    const std::size_t off_b = shape.size() - b.keep.shape.size();
    for (std::size_t i = 0; i < a.keep.shape.size(); ++i)
        wa[off_a + i] = a.keep.shape[i] == 1 && shape[off_a + i] != 1 ? 0 : sa[i];
    for (std::size_t i = 0; i < b.keep.shape.size(); ++i)
        wb[off_b + i] = b.keep.shape[i] == 1 && shape[off_b + i] != 1 ? 0 : sb[i];

    std::vector<i64> idx(shape.size(), 0);
    i64 ao = 0, bo = 0;
    for (i64 f = 0; f < n; ++f) {
        keep[static_cast<std::size_t>(f)] =
            a.keep.data[static_cast<std::size_t>(ao)] && b.keep.data[static_cast<std::size_t>(bo)];
        for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
            ++idx[static_cast<std::size_t>(d)];
            ao += wa[static_cast<std::size_t>(d)];
            bo += wb[static_cast<std::size_t>(d)];
            if (idx[static_cast<std::size_t>(d)] < shape[static_cast<std::size_t>(d)]) break;
            ao -= wa[static_cast<std::size_t>(d)] * shape[static_cast<std::size_t>(d)];
            bo -= wb[static_cast<std::size_t>(d)] * shape[static_cast<std::size_t>(d)];
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
    return AttentionMask{BoolTensor(std::move(shape), std::move(keep))};
}

namespace {

// Reject fully masked query rows before the softmax can see them, naming the
// violating batch/row.
void check_mask_rows(const AttentionMask& mask, i64 b, i64 tq, i64 tk) {
    const auto& shape = mask.keep.shape;
    const i64 mb = shape[0];
    const i64 mq = shape[2];
    const i64 mk = shape[3];
    FORGE_CHECK(mq == tq && mk == tk && (mb == b || mb == 1), "attention mask ",
                shape_str(shape), " does not match scores [", b, ", H, ", tq, ", ", tk, "]");
    for (i64 bi = 0; bi < mb; ++bi)
        for (i64 i = 0; i < tq; ++i) {
            bool any = false;
            for (i64 j = 0; j < tk && !any; ++j)
                any = mask.keep.data[static_cast<std::size_t>((bi * tq + i) * tk + j)] != 0;
            if (!any)
                throw DataError(format_msg("attention: fully masked query row (batch ", bi,
                                           ", row ", i, ")"));
        }
}

} // namespace

AttentionResult scaled_dot_product(const AttentionArgs& args) {
    FORGE_CHECK(args.q.rank() == 4 && args.k.rank() == 4 && args.v.rank() == 4,
                "scaled_dot_product expects [B, H, T, d_k] operands, got ",
                shape_str(args.q.shape()), ", ", shape_str(args.k.shape()), ", ",
                shape_str(args.v.shape()));
    const i64 b = args.q.dim(0), h = args.q.dim(1), tq = args.q.dim(2), dk = args.q.dim(3);
    const i64 tk = args.k.dim(2);
    FORGE_CHECK(args.k.dim(3) == dk, "scaled_dot_product: query d_k ", dk, " != key d_k ",
                args.k.dim(3));
    FORGE_CHECK(args.v.dim(2) == tk, "scaled_dot_product: ", tk, " keys but ", args.v.dim(2),
                " values");

    Tensor scores = mul_scalar(matmul(args.q, transpose_last2(args.k)),
                               1.0 / std::sqrt(static_cast<double>(dk)));
    if (args.score_bias) {
        FORGE_CHECK(args.q_pos && args.k_pos, "score bias hook requires positions");
        scores = args.score_bias(scores, *args.q_pos, *args.k_pos);
    }
    if (args.mask) {
        check_mask_rows(*args.mask, b, tq, tk);
        scores = masked_fill_neg_inf(scores, args.mask->keep);
    }
    Tensor weights = softmax(scores, -1);
    Tensor dropped = dropout(weights, args.dropout_rate, args.training, args.seed);
    Tensor output = matmul(dropped, args.v);
    (void)h;
    return {output, weights};
}

namespace {

std::unordered_map<std::string, AttentionMethodFn>& method_registry() {
    static std::unordered_map<std::string, AttentionMethodFn> registry{
        {"full", [](const AttentionArgs& a) { return scaled_dot_product(a); }},
    };
    return registry;
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

void register_attention_method(const std::string& name, AttentionMethodFn method) {
    std::lock_guard<std::mutex> lock(registry_mutex());
    auto& reg = method_registry();
    FORGE_CHECK(!reg.count(name), "attention method '", name, "' already registered");
    reg.emplace(name, std::move(method));
}

const AttentionMethodFn& lookup_attention_method(const std::string& name) {
    std::lock_guard<std::mutex> lock(registry_mutex());
    auto& reg = method_registry();
    auto it = reg.find(name);
    if (it == reg.end()) {
        std::string known;
        for (const auto& [k, v] : reg) known += known.empty() ? k : ", " + k;
        throw DataError(format_msg("unknown attention method '", name, "'; registered: ", known));
    }
    return it->second;
}

std::vector<std::string> registered_attention_methods() {
    std::lock_guard<std::mutex> lock(registry_mutex());
    std::vector<std::string> names;
    for (const auto& [k, v] : method_registry()) names.push_back(k);
    return names;
}

void MultiHeadConfig::validate(bool rotary_possible) const {
    FORGE_CHECK(d_model >= 1 && n_heads >= 1, "multi-head config needs d_model and n_heads >= 1");
    FORGE_CHECK(d_model % n_heads == 0, "n_heads ", n_heads, " must divide d_model ", d_model);
    const i64 dk = d_k();
    FORGE_CHECK(dk >= 2, "head dimension must be >= 2, got ", dk);
    if (rotary_possible)
        FORGE_CHECK(dk % 2 == 0, "rotary encodings need an even head dimension, got ", dk);
}

MultiHeadAttention::MultiHeadAttention(MultiHeadConfig cfg_, Dtype dt, std::uint64_t seed,
                                       const std::string& name_prefix)
    : cfg(std::move(cfg_)), prefix(name_prefix) {
    const i64 d = cfg.d_model;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto make_w = [&](const char* leaf) {
        return Tensor::uniform({d, d}, -bound, bound, seed, fnv1a(prefix + "." + leaf), dt, true);
    };
    wq = make_w("wq");
    wk = make_w("wk");
    wv = make_w("wv");
    wo = make_w("wo");
    bq = Tensor::zeros({d}, dt, true);
    bk = Tensor::zeros({d}, dt, true);
    bv = Tensor::zeros({d}, dt, true);
    bo = Tensor::zeros({d}, dt, true);
}

namespace {

// [B, T, d] -> [B, H, T, d_k]
Tensor split_heads(const Tensor& x, i64 h) {
    const i64 b = x.dim(0), t = x.dim(1), d = x.dim(2);
    return permute(reshape(x, {b, t, h, d / h}), {0, 2, 1, 3});
}

// [B, H, T, d_k] -> [B, T, d]
Tensor merge_heads(const Tensor& x) {
    const i64 b = x.dim(0), h = x.dim(1), t = x.dim(2), dk = x.dim(3);
    return reshape(permute(x, {0, 2, 1, 3}), {b, t, h * dk});
}

} // namespace

Tensor MultiHeadAttention::forward(const Tensor& x_q, const Tensor& x_kv,
                                   const AttentionMask* mask, const PositionValues& q_pos,
                                   const PositionValues& k_pos,
                                   const PositionalStrategyManager& strategies,
                                   AttentionContext ctx, bool training,
                                   std::uint64_t seed) const {
    const auto& method = lookup_attention_method(cfg.attention_method);

    Tensor q = split_heads(linear(x_q, wq, bq), cfg.n_heads);
    Tensor k = split_heads(linear(x_kv, wk, bk), cfg.n_heads);
    Tensor v = split_heads(linear(x_kv, wv, bv), cfg.n_heads);

    auto [q_enc, k_enc] = strategies.apply_qk(q, k, q_pos, k_pos);

    AttentionArgs args;
    args.q = q_enc;
    args.k = k_enc;
    args.v = v;
    args.mask = mask;
    args.score_bias = [&strategies, ctx](const Tensor& scores, const PositionValues& qp,
                                         const PositionValues& kp) {
        return strategies.apply_score_bias(scores, qp, kp, ctx);
    };
    args.q_pos = &q_pos;
    args.k_pos = &k_pos;
    args.dropout_rate = cfg.dropout_rate;
    args.training = training;
    args.seed = seed;

    AttentionResult res = method(args);
    return linear(merge_heads(res.output), wo, bo);
}

void MultiHeadAttention::collect_parameters(std::vector<Parameter>& out) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".bq", bq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".bk", bk});
    out.push_back({prefix + ".wv", wv});
    out.push_back({prefix + ".bv", bv});
    out.push_back({prefix + ".wo", wo});
    out.push_back({prefix + ".bo", bo});
}

} // namespace forge
