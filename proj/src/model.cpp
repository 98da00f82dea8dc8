#include "forge/model.hpp"

#include <cmath>

#include "forge/kernels.hpp"
#include "forge/rng.hpp"

namespace forge {

using kernels::i64;

NormStyle norm_style_from_name(const std::string& name) {
    if (name == "pre") return NormStyle::pre;
    if (name == "post") return NormStyle::post;
    throw DataError(format_msg("unknown norm style '", name, "'; valid: pre, post"));
}

const char* norm_style_name(NormStyle s) { return s == NormStyle::pre ? "pre" : "post"; }

void ModelConfig::validate() const {
    FORGE_CHECK(n_layers >= 1, "model config: n_layers must be >= 1, got ", n_layers);
    FORGE_CHECK(d_model >= 2, "model config: d_model must be >= 2, got ", d_model);
    FORGE_CHECK(n_heads >= 1, "model config: n_heads must be >= 1, got ", n_heads);
    FORGE_CHECK(d_model % n_heads == 0, "model config: n_heads ", n_heads,
                " must divide d_model ", d_model);
    FORGE_CHECK(d_ff >= 1, "model config: d_ff must be >= 1, got ", d_ff);
    FORGE_CHECK(dropout_rate >= 0.0 && dropout_rate < 1.0,
                "model config: dropout_rate must be in [0, 1), got ", dropout_rate);
    FORGE_CHECK(src_vocab >= 1 && tgt_vocab >= 1,
                "model config: vocab sizes must be >= 1, got src ", src_vocab, " tgt ", tgt_vocab);
    FORGE_CHECK(max_len >= 1, "model config: max_len must be >= 1, got ", max_len);
    if (encodings.sinusoidal)
        FORGE_CHECK(d_model % 2 == 0, "model config: sinusoidal encoding needs even d_model");
    if (encodings.rotary)
        FORGE_CHECK((d_model / n_heads) % 2 == 0,
                    "model config: rotary encoding needs an even head dimension, got ",
                    d_model / n_heads);
    if (encodings.learned)
        FORGE_CHECK(encodings.learned_max_positions >= max_len,
                    "model config: learned_max_positions ", encodings.learned_max_positions,
                    " smaller than max_len ", max_len);
    MultiHeadConfig mha{d_model, n_heads, dropout_rate, attention_method};
    mha.validate(encodings.rotary);
}

std::int64_t parameter_count(const ModelConfig& cfg) {
    const i64 d = cfg.d_model, dff = cfg.d_ff, n = cfg.n_layers;
    const i64 mha = 4 * d * (d + 1);
    const i64 ffn = 2 * d * dff + dff + d;
    const i64 norm = 2 * d;
    const i64 final_norm = cfg.norm_style == NormStyle::pre ? norm : 0;
    i64 total = (cfg.src_vocab + cfg.tgt_vocab) * d;                 // embeddings
    if (cfg.encodings.learned) total += cfg.encodings.learned_max_positions * d;
    total += n * (mha + ffn + 2 * norm) + final_norm;                // encoder
    total += n * (2 * mha + ffn + 3 * norm) + final_norm;            // decoder
    total += d * cfg.tgt_vocab + cfg.tgt_vocab;                      // output projection
    return total;
}

std::uint64_t RngCursor::next() { return rng_hash(seed, 0xF02Dull, n++); }

Tensor FeedForward::forward(const Tensor& x) const {
    return linear(activation(linear(x, w1, b1), act), w2, b2);
}

void FeedForward::collect_parameters(std::vector<Parameter>& out) const {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
}

Tensor SublayerUnit::apply(const Tensor& x, const std::function<Tensor(const Tensor&)>& inner,
                           bool training, RngCursor& rng) const {
    if (style == NormStyle::pre) {
        Tensor y = dropout(inner(layer_norm(x, gain, bias)), dropout_rate, training, rng.next());
        FORGE_CHECK(y.shape() == x.shape(), "sublayer inner block changed shape ",
                    shape_str(x.shape()), " -> ", shape_str(y.shape()));
        return add(x, y);
    }
    Tensor y = dropout(inner(x), dropout_rate, training, rng.next());
    FORGE_CHECK(y.shape() == x.shape(), "sublayer inner block changed shape ",
                shape_str(x.shape()), " -> ", shape_str(y.shape()));
    return layer_norm(add(x, y), gain, bias);
}

void SublayerUnit::collect_parameters(std::vector<Parameter>& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".bias", bias});
}

Tensor EncoderLayer::forward(const Tensor& x, const AttentionMask* mask,
                             const PositionValues& pos,
                             const PositionalStrategyManager& strategies, bool training,
                             RngCursor& rng) const {
    Tensor h = sub_attn.apply(
        x,
        [&](const Tensor& in) {
            return self_attn.forward(in, in, mask, pos, pos, strategies,
                                     AttentionContext::encoder_self, training, rng.next());
        },
        training, rng);
    return sub_ffn.apply(h, [&](const Tensor& in) { return ffn.forward(in); }, training, rng);
}

void EncoderLayer::collect_parameters(std::vector<Parameter>& out) const {
    self_attn.collect_parameters(out);
    sub_attn.collect_parameters(out);
    ffn.collect_parameters(out);
    sub_ffn.collect_parameters(out);
}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory,
                             const AttentionMask* self_mask, const AttentionMask* cross_mask,
                             const PositionValues& tgt_pos, const PositionValues& src_pos,
                             const PositionalStrategyManager& strategies, bool training,
                             RngCursor& rng) const {
    Tensor h = sub_self.apply(
        x,
        [&](const Tensor& in) {
            return self_attn.forward(in, in, self_mask, tgt_pos, tgt_pos, strategies,
                                     AttentionContext::decoder_self, training, rng.next());
        },
        training, rng);
    h = sub_cross.apply(
        h,
        [&](const Tensor& in) {
            return cross_attn.forward(in, memory, cross_mask, tgt_pos, src_pos, strategies,
                                      AttentionContext::cross, training, rng.next());
        },
        training, rng);
    return sub_ffn.apply(h, [&](const Tensor& in) { return ffn.forward(in); }, training, rng);
}

void DecoderLayer::collect_parameters(std::vector<Parameter>& out) const {
    self_attn.collect_parameters(out);
    sub_self.collect_parameters(out);
    cross_attn.collect_parameters(out);
    sub_cross.collect_parameters(out);
    ffn.collect_parameters(out);
    sub_ffn.collect_parameters(out);
}

namespace {

Tensor init_matrix(i64 rows, i64 cols, Dtype dt, std::uint64_t seed, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    return Tensor::uniform({rows, cols}, -bound, bound, seed, fnv1a(name), dt, true);
}

FeedForward make_ffn(const ModelConfig& cfg, std::uint64_t seed, const std::string& prefix) {
    FeedForward f;
    f.prefix = prefix;
    f.act = cfg.activation;
    f.w1 = init_matrix(cfg.d_model, cfg.d_ff, cfg.dtype, seed, prefix + ".w1");
    f.b1 = Tensor::zeros({cfg.d_ff}, cfg.dtype, true);
    f.w2 = init_matrix(cfg.d_ff, cfg.d_model, cfg.dtype, seed, prefix + ".w2");
    f.b2 = Tensor::zeros({cfg.d_model}, cfg.dtype, true);
    return f;
}

SublayerUnit make_sublayer(const ModelConfig& cfg, const std::string& prefix) {
    SublayerUnit s;
    s.prefix = prefix;
    s.dropout_rate = cfg.dropout_rate;
    s.style = cfg.norm_style;
    s.gain = Tensor::full({cfg.d_model}, 1.0, cfg.dtype);
    s.gain.set_requires_grad(true);
    s.bias = Tensor::zeros({cfg.d_model}, cfg.dtype, true);
    return s;
}

void check_length(i64 t, i64 max_len) {
    FORGE_CHECK(t <= max_len, "sequence length ", t, " exceeds the maximum context window of ",
                max_len, " tokens");
}

std::vector<std::uint8_t> all_ones(i64 n) {
    return std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1);
}

} // namespace

Seq2SeqModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Seq2SeqModel m;
    m.config = cfg;

    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    m.src_embed = Tensor::uniform({cfg.src_vocab, cfg.d_model}, -bound, bound, seed,
                                  fnv1a("src_embed"), cfg.dtype, true);
    m.tgt_embed = Tensor::uniform({cfg.tgt_vocab, cfg.d_model}, -bound, bound, seed,
                                  fnv1a("tgt_embed"), cfg.dtype, true);
    if (cfg.encodings.learned)
        m.learned_table = LearnedPositionTable::make(cfg.encodings.learned_max_positions,
                                                     cfg.d_model, cfg.dtype, seed, "pos_table")
                              .table;
    m.strategies = PositionalStrategyManager(cfg.encodings, cfg.d_model, cfg.n_heads, cfg.dtype,
                                             m.learned_table);

    MultiHeadConfig mha{cfg.d_model, cfg.n_heads, cfg.dropout_rate, cfg.attention_method};
    for (i64 l = 0; l < cfg.n_layers; ++l) {
        const std::string ep = "encoder.layer" + std::to_string(l);
        EncoderLayer layer;
        layer.self_attn = MultiHeadAttention(mha, cfg.dtype, seed, ep + ".self_attn");
        layer.ffn = make_ffn(cfg, seed, ep + ".ffn");
        layer.sub_attn = make_sublayer(cfg, ep + ".sub_attn");
        layer.sub_ffn = make_sublayer(cfg, ep + ".sub_ffn");
        m.encoder_layers.push_back(std::move(layer));

        const std::string dp = "decoder.layer" + std::to_string(l);
        DecoderLayer dec;
        dec.self_attn = MultiHeadAttention(mha, cfg.dtype, seed, dp + ".self_attn");
        dec.cross_attn = MultiHeadAttention(mha, cfg.dtype, seed, dp + ".cross_attn");
        dec.ffn = make_ffn(cfg, seed, dp + ".ffn");
        dec.sub_self = make_sublayer(cfg, dp + ".sub_self");
        dec.sub_cross = make_sublayer(cfg, dp + ".sub_cross");
        dec.sub_ffn = make_sublayer(cfg, dp + ".sub_ffn");
        m.decoder_layers.push_back(std::move(dec));
    }

    if (cfg.norm_style == NormStyle::pre) {
        m.enc_norm_gain = Tensor::full({cfg.d_model}, 1.0, cfg.dtype);
        m.enc_norm_gain.set_requires_grad(true);
        m.enc_norm_bias = Tensor::zeros({cfg.d_model}, cfg.dtype, true);
        m.dec_norm_gain = Tensor::full({cfg.d_model}, 1.0, cfg.dtype);
        m.dec_norm_gain.set_requires_grad(true);
        m.dec_norm_bias = Tensor::zeros({cfg.d_model}, cfg.dtype, true);
    }

    m.out_w = init_matrix(cfg.d_model, cfg.tgt_vocab, cfg.dtype, seed, "out_proj.w");
    m.out_b = Tensor::zeros({cfg.tgt_vocab}, cfg.dtype, true);
    return m;
}

Tensor Seq2SeqModel::encode(const IdTensor& src_ids, const PositionValues& src_pos,
                            const std::vector<std::uint8_t>& src_keep, bool training,
                            std::uint64_t seed) const {
    FORGE_CHECK(src_ids.shape.size() == 2, "encode expects ids [B, T], got ",
                shape_str(src_ids.shape));
    const i64 b = src_ids.shape[0], t = src_ids.shape[1];
    check_length(t, config.max_len);
    RngCursor rng{seed};

    Tensor x = mul_scalar(embedding_lookup(src_embed, src_ids),
                          std::sqrt(static_cast<double>(config.d_model)));
    x = strategies.apply_pre_additive(x, src_pos);
    x = dropout(x, config.dropout_rate, training, rng.next());

    AttentionMask pad =
        AttentionMask::key_padding(src_keep.empty() ? all_ones(b * t) : src_keep, b, t, t);
    for (const auto& layer : encoder_layers)
        x = layer.forward(x, &pad, src_pos, strategies, training, rng);

    if (config.norm_style == NormStyle::pre) x = layer_norm(x, enc_norm_gain, enc_norm_bias);
    return x;
}

Tensor Seq2SeqModel::decode(const IdTensor& tgt_ids, const PositionValues& tgt_pos,
                            const Tensor& memory, const PositionValues& src_pos,
                            const std::vector<std::uint8_t>& src_keep,
                            const std::vector<std::uint8_t>& tgt_keep, bool training,
                            std::uint64_t seed) const {
    FORGE_CHECK(tgt_ids.shape.size() == 2, "decode expects ids [B, T], got ",
                shape_str(tgt_ids.shape));
    const i64 b = tgt_ids.shape[0], t = tgt_ids.shape[1];
    const i64 t_src = memory.dim(1);
    check_length(t, config.max_len);
    RngCursor rng{mix64(seed) ^ 0xDECull};

    Tensor x = mul_scalar(embedding_lookup(tgt_embed, tgt_ids),
                          std::sqrt(static_cast<double>(config.d_model)));
    x = strategies.apply_pre_additive(x, tgt_pos);
    x = dropout(x, config.dropout_rate, training, rng.next());

    AttentionMask self_mask = AttentionMask::combine(
        AttentionMask::causal(t),
        AttentionMask::key_padding(tgt_keep.empty() ? all_ones(b * t) : tgt_keep, b, t, t));
    AttentionMask cross_mask = AttentionMask::key_padding(
        src_keep.empty() ? all_ones(b * t_src) : src_keep, b, t, t_src);

    for (const auto& layer : decoder_layers)
        x = layer.forward(x, memory, &self_mask, &cross_mask, tgt_pos, src_pos, strategies,
                          training, rng);

    if (config.norm_style == NormStyle::pre) x = layer_norm(x, dec_norm_gain, dec_norm_bias);
    return linear(x, out_w, out_b);
}

std::vector<Parameter> Seq2SeqModel::parameters() {
    return static_cast<const Seq2SeqModel*>(this)->parameters();
}

std::vector<Parameter> Seq2SeqModel::parameters() const {
    std::vector<Parameter> out;
    out.push_back({"src_embed", src_embed});
    out.push_back({"tgt_embed", tgt_embed});
    if (learned_table.defined()) out.push_back({"pos_table", learned_table});
    for (const auto& l : encoder_layers) l.collect_parameters(out);
    if (enc_norm_gain.defined()) {
        out.push_back({"encoder.final_norm.gain", enc_norm_gain});
        out.push_back({"encoder.final_norm.bias", enc_norm_bias});
    }
    for (const auto& l : decoder_layers) l.collect_parameters(out);
    if (dec_norm_gain.defined()) {
        out.push_back({"decoder.final_norm.gain", dec_norm_gain});
        out.push_back({"decoder.final_norm.bias", dec_norm_bias});
    }
    out.push_back({"out_proj.w", out_w});
    out.push_back({"out_proj.b", out_b});
    return out;
}

} // namespace forge
