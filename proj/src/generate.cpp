#include "forge/generate.hpp"

#include <algorithm>
#include <cmath>

namespace forge {

namespace {

bool is_banned(std::int32_t tok, const GenerateOptions& opts) {
    return std::find(opts.banned.begin(), opts.banned.end(), tok) != opts.banned.end();
}

double normalized(double lp, std::size_t len, double alpha) {
    return lp / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), alpha);
}

struct Hypothesis {
    std::vector<std::int32_t> tokens;
    double lp = 0.0;
    bool ended_with_eos = false;
};

// ranking: higher lp first, then lexicographically smaller token sequence
bool candidate_before(const Hypothesis& a, const Hypothesis& b) {
    if (a.lp != b.lp) return a.lp > b.lp;
    return a.tokens < b.tokens;
}

} // namespace

std::vector<std::int32_t> greedy_decode_steps(const StepFn& step, const GenerateOptions& opts) {
    std::vector<std::int32_t> prefix;
    for (int s = 0; s < opts.max_len; ++s) {
        const std::vector<double> lps = step(prefix);
        std::int32_t best = -1;
        for (std::int32_t tok = 0; tok < static_cast<std::int32_t>(lps.size()); ++tok) {
            if (is_banned(tok, opts)) continue;
            if (best < 0 || lps[static_cast<std::size_t>(tok)] > lps[static_cast<std::size_t>(best)])
                best = tok;
        }
        FORGE_CHECK(best >= 0, "greedy decode: no emittable token");
        if (best == opts.eos_id) break;
        prefix.push_back(best);
    }
    return prefix;
}

std::vector<std::int32_t> beam_search_steps(const StepFn& step, const GenerateOptions& opts) {
    FORGE_CHECK(opts.width >= 1, "beam width must be >= 1, got ", opts.width);
    if (opts.max_len <= 0) return {};

    std::vector<Hypothesis> live{Hypothesis{}};
    bool have_best = false;
    Hypothesis best;
    auto bank = [&](Hypothesis&& h) {
        if (!have_best) {
            best = std::move(h);
            have_best = true;
            return;
        }
        const double ns_new = normalized(h.lp, h.tokens.size(), opts.length_penalty);
        const double ns_old = normalized(best.lp, best.tokens.size(), opts.length_penalty);
        if (ns_new > ns_old || (ns_new == ns_old && h.tokens < best.tokens)) best = std::move(h);
    };

    for (int s = 1; s <= opts.max_len && !live.empty(); ++s) {
        std::vector<Hypothesis> candidates;
        candidates.reserve(live.size() * 8);
        for (const auto& hyp : live) {
            const std::vector<double> lps = step(hyp.tokens);
            for (std::int32_t tok = 0; tok < static_cast<std::int32_t>(lps.size()); ++tok) {
                if (is_banned(tok, opts)) continue;
                Hypothesis cand;
                cand.lp = hyp.lp + lps[static_cast<std::size_t>(tok)];
                cand.tokens = hyp.tokens;
                cand.ended_with_eos = tok == opts.eos_id;
                if (!cand.ended_with_eos) cand.tokens.push_back(tok);
                candidates.push_back(std::move(cand));
            }
        }
        std::sort(candidates.begin(), candidates.end(), candidate_before);
        if (candidates.size() > static_cast<std::size_t>(opts.width))
            candidates.resize(static_cast<std::size_t>(opts.width));

        std::vector<Hypothesis> next_live;
        for (auto& cand : candidates) {
            const bool finished_cap = static_cast<int>(cand.tokens.size()) >= opts.max_len;
            if (cand.ended_with_eos || finished_cap)
                bank(std::move(cand));
            else
                next_live.push_back(std::move(cand));
        }
        live = std::move(next_live);
    }

    return have_best ? best.tokens : std::vector<std::int32_t>{};
}

StepFn model_step_fn(const Seq2SeqModel& model, const std::vector<std::int32_t>& src_ids,
                     std::int32_t bos_id) {
    const std::int64_t t_src = static_cast<std::int64_t>(src_ids.size());
    auto src_pos = std::make_shared<PositionValues>(PositionValues::arange(1, t_src));
    Tensor memory;
    {
        NoGradGuard ng;
        memory = model.encode(IdTensor({1, t_src}, src_ids), *src_pos, {}, false, 0);
    }
    const Seq2SeqModel* m = &model;
    return [m, memory, src_pos, bos_id](const std::vector<std::int32_t>& prefix) {
        NoGradGuard ng;
        std::vector<std::int32_t> tgt;
        tgt.reserve(prefix.size() + 1);
        tgt.push_back(bos_id);
        tgt.insert(tgt.end(), prefix.begin(), prefix.end());
        const std::int64_t t = static_cast<std::int64_t>(tgt.size());
        Tensor logits = m->decode(IdTensor({1, t}, std::move(tgt)), PositionValues::arange(1, t),
                                  memory, *src_pos, {}, {}, false, 0);
        const std::int64_t v = logits.dim(-1);
        std::vector<double> row(static_cast<std::size_t>(v));
        for (std::int64_t j = 0; j < v; ++j) row[static_cast<std::size_t>(j)] = logits.at({0, t - 1, j});
        // log-softmax
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double sum = 0.0;
        for (double x : row) sum += std::exp(x - mx);
        const double lse = std::log(sum) + mx;
        for (double& x : row) x -= lse;
        return row;
    };
}

namespace {

GenerateOptions model_options(const Seq2SeqModel& model, int max_len, std::int32_t bos_id,
                              std::int32_t eos_id, int width, double alpha) {
    FORGE_CHECK(max_len <= model.config.max_len, "decode max_len ", max_len,
                " exceeds the model maximum context window of ", model.config.max_len);
    GenerateOptions opts;
    opts.max_len = max_len;
    opts.eos_id = eos_id;
    opts.banned = {bos_id, 0}; // never emit bos or pad
    opts.width = width;
    opts.length_penalty = alpha;
    return opts;
}

} // namespace

std::vector<std::int32_t> greedy_decode(const Seq2SeqModel& model,
                                        const std::vector<std::int32_t>& src_ids, int max_len,
                                        std::int32_t bos_id, std::int32_t eos_id) {
    return greedy_decode_steps(model_step_fn(model, src_ids, bos_id),
                               model_options(model, max_len, bos_id, eos_id, 1, 0.0));
}

std::vector<std::int32_t> beam_search(const Seq2SeqModel& model,
                                      const std::vector<std::int32_t>& src_ids, int width,
                                      int max_len, double length_penalty, std::int32_t bos_id,
                                      std::int32_t eos_id) {
    return beam_search_steps(model_step_fn(model, src_ids, bos_id),
                             model_options(model, max_len, bos_id, eos_id, width, length_penalty));
}

std::vector<std::vector<std::int32_t>> greedy_decode_batch(
    const Seq2SeqModel& model, const std::vector<std::vector<std::int32_t>>& src_seqs, int max_len,
    std::int32_t pad_id, std::int32_t bos_id, std::int32_t eos_id) {
    NoGradGuard ng;
    const std::int64_t b = static_cast<std::int64_t>(src_seqs.size());
    if (b == 0) return {};
    std::int64_t t_src = 0;
    for (const auto& s : src_seqs) t_src = std::max<std::int64_t>(t_src, static_cast<std::int64_t>(s.size()));

    std::vector<std::int32_t> src_flat(static_cast<std::size_t>(b * t_src), pad_id);
    std::vector<std::uint8_t> src_keep(static_cast<std::size_t>(b * t_src), 0);
    for (std::int64_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < src_seqs[static_cast<std::size_t>(i)].size(); ++j) {
            src_flat[static_cast<std::size_t>(i * t_src) + j] =
                src_seqs[static_cast<std::size_t>(i)][j];
            src_keep[static_cast<std::size_t>(i * t_src) + j] = 1;
        }
    PositionValues src_pos = PositionValues::arange(b, t_src);
    Tensor memory = model.encode(IdTensor({b, t_src}, std::move(src_flat)), src_pos, src_keep,
                                 false, 0);

    std::vector<std::vector<std::int32_t>> result(static_cast<std::size_t>(b));
    std::vector<bool> finished(static_cast<std::size_t>(b), false);
    std::vector<std::int32_t> tgt_flat(static_cast<std::size_t>(b), bos_id); // [B, 1] grows

    for (int s = 0; s < max_len; ++s) {
        const std::int64_t t = s + 1;
        Tensor logits = model.decode(IdTensor({b, t}, tgt_flat), PositionValues::arange(b, t),
                                     memory, src_pos, src_keep, {}, false, 0);
        std::vector<std::int32_t> next(static_cast<std::size_t>(b), pad_id);
        bool all_done = true;
        for (std::int64_t i = 0; i < b; ++i) {
            if (finished[static_cast<std::size_t>(i)]) continue;
            std::int32_t best = -1;
            double best_lp = 0;
            const std::int64_t v = logits.dim(-1);
            for (std::int32_t tok = 0; tok < v; ++tok) {
                if (tok == bos_id || tok == pad_id) continue;
                const double lp = logits.at({i, t - 1, tok});
                if (best < 0 || lp > best_lp) {
                    best = tok;
                    best_lp = lp;
                }
            }
            if (best == eos_id) {
                finished[static_cast<std::size_t>(i)] = true;
            } else {
                result[static_cast<std::size_t>(i)].push_back(best);
                next[static_cast<std::size_t>(i)] = best;
                all_done = false;
            }
        }
        if (all_done) break;
        // grow [B, t] -> [B, t+1]
        std::vector<std::int32_t> grown(static_cast<std::size_t>(b * (t + 1)));
        for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t j = 0; j < t; ++j)
                grown[static_cast<std::size_t>(i * (t + 1) + j)] =
                    tgt_flat[static_cast<std::size_t>(i * t + j)];
            grown[static_cast<std::size_t>(i * (t + 1) + t)] = next[static_cast<std::size_t>(i)];
        }
        tgt_flat = std::move(grown);
    }
    return result;
}

} // namespace forge
