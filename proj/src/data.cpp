#include "forge/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "forge/rng.hpp"

namespace forge {

namespace {
const std::vector<std::string> kReserved{"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab Vocab::from_tokens(const std::vector<TokenSeq>& lines) {
    std::set<std::string> uniq;
    for (const auto& line : lines)
        for (const auto& tok : line) uniq.insert(tok);
    Vocab v;
    v.id_to_token = kReserved;
    for (const auto& tok : uniq) v.id_to_token.push_back(tok);
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = static_cast<std::int32_t>(i);
    return v;
}

Vocab Vocab::identity(std::int32_t size) {
    FORGE_CHECK(size >= 5, "identity vocab needs size >= 5 (4 reserved ids plus content), got ",
                size);
    Vocab v;
    v.id_to_token = kReserved;
    for (std::int32_t i = 4; i < size; ++i) v.id_to_token.push_back(std::to_string(i));
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = static_cast<std::int32_t>(i);
    return v;
}

std::int32_t Vocab::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? unk_id : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
    FORGE_CHECK(id >= 0 && id < size(), "vocab id ", id, " out of range [0, ", size(), ")");
    return id_to_token[static_cast<std::size_t>(id)];
}

std::pair<ParallelCorpus, std::int64_t> filter_by_context(const ParallelCorpus& corpus,
                                                          std::int64_t max_len) {
    FORGE_CHECK(max_len >= 1, "filter_by_context: max_len must be >= 1, got ", max_len);
    ParallelCorpus kept;
    std::int64_t dropped = 0;
    for (const auto& pair : corpus.pairs) {
        const std::int64_t src_len = static_cast<std::int64_t>(pair.first.size()) + 2;
        const std::int64_t tgt_len = static_cast<std::int64_t>(pair.second.size()) + 2;
        if (src_len > max_len || tgt_len > max_len)
            ++dropped;
        else
            kept.pairs.push_back(pair);
    }
    return {std::move(kept), dropped};
}

ToyTask toy_task_from_name(const std::string& name) {
    if (name == "copy") return ToyTask::copy;
    if (name == "reverse") return ToyTask::reverse;
    if (name == "shift_cipher") return ToyTask::shift_cipher;
    throw DataError(format_msg("unknown toy task '", name,
                               "'; valid: copy, reverse, shift_cipher"));
}

const char* toy_task_name(ToyTask t) {
    switch (t) {
    case ToyTask::copy: return "copy";
    case ToyTask::reverse: return "reverse";
    case ToyTask::shift_cipher: return "shift_cipher";
    }
    return "?";
}

ParallelCorpus make_toy_corpus(ToyTask task, std::int64_t vocab_size, std::int64_t min_len,
                               std::int64_t max_len, std::int64_t n_pairs, std::uint64_t seed) {
    FORGE_CHECK(vocab_size >= 5, "toy corpus needs vocab_size >= 5, got ", vocab_size);
    FORGE_CHECK(min_len >= 1 && max_len >= min_len, "toy corpus: bad length range [", min_len,
                ", ", max_len, "]");
    const std::int64_t content = vocab_size - 4;
    ParallelCorpus corpus;
    CounterRng rng(seed, fnv1a("toy_corpus"));
    for (std::int64_t p = 0; p < n_pairs; ++p) {
        const std::int64_t len =
            min_len + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
        std::vector<std::int32_t> src_ids(static_cast<std::size_t>(len));
        for (auto& id : src_ids)
            id = 4 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(content)));

        std::vector<std::int32_t> tgt_ids = src_ids;
        switch (task) {
        case ToyTask::copy: break;
        case ToyTask::reverse: std::reverse(tgt_ids.begin(), tgt_ids.end()); break;
        case ToyTask::shift_cipher:
            for (auto& id : tgt_ids) id = 4 + static_cast<std::int32_t>((id - 4 + 1) % content);
            break;
        }

        TokenSeq src, tgt;
        for (auto id : src_ids) src.push_back(std::to_string(id));
        for (auto id : tgt_ids) tgt.push_back(std::to_string(id));
        corpus.pairs.emplace_back(std::move(src), std::move(tgt));
    }
    return corpus;
}

std::vector<Batch> batchify(const ParallelCorpus& corpus, const Vocab& src_vocab,
                            const Vocab& tgt_vocab, std::int64_t batch_size, std::int64_t max_len,
                            std::uint64_t seed) {
    FORGE_CHECK(batch_size >= 1, "batchify: batch_size must be >= 1, got ", batch_size);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(seed, fnv1a("batchify"));
    shuffle(order, rng);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        const std::int64_t b = static_cast<std::int64_t>(end - start);

        std::int64_t ts = 0, tt = 0;
        for (std::size_t i = start; i < end; ++i) {
            const auto& pair = corpus.pairs[order[i]];
            ts = std::max<std::int64_t>(ts, static_cast<std::int64_t>(pair.first.size()) + 2);
            tt = std::max<std::int64_t>(tt, static_cast<std::int64_t>(pair.second.size()) + 1);
        }
        FORGE_CHECK(ts <= max_len && tt <= max_len,
                    "batchify: sequence exceeds max_len; filter the corpus first");

        Batch batch;
        std::vector<std::int32_t> src(static_cast<std::size_t>(b * ts), Vocab::pad_id);
        std::vector<std::int32_t> tin(static_cast<std::size_t>(b * tt), Vocab::pad_id);
        std::vector<std::int32_t> tout(static_cast<std::size_t>(b * tt), Vocab::pad_id);
        batch.src_keep.assign(static_cast<std::size_t>(b * ts), 0);
        batch.tgt_keep.assign(static_cast<std::size_t>(b * tt), 0);

        for (std::size_t i = start; i < end; ++i) {
            const auto& pair = corpus.pairs[order[i]];
            const std::int64_t row = static_cast<std::int64_t>(i - start);

            std::vector<std::int32_t> s{Vocab::bos_id};
            for (const auto& tok : pair.first) s.push_back(src_vocab.id(tok));
            s.push_back(Vocab::eos_id);
            for (std::size_t j = 0; j < s.size(); ++j) {
                src[static_cast<std::size_t>(row * ts) + j] = s[j];
                batch.src_keep[static_cast<std::size_t>(row * ts) + j] = 1;
            }

            std::vector<std::int32_t> y;
            for (const auto& tok : pair.second) y.push_back(tgt_vocab.id(tok));
            // tgt_in: bos y1..yn; tgt_out: y1..yn eos
            tin[static_cast<std::size_t>(row * tt)] = Vocab::bos_id;
            batch.tgt_keep[static_cast<std::size_t>(row * tt)] = 1;
            for (std::size_t j = 0; j < y.size(); ++j) {
                tin[static_cast<std::size_t>(row * tt) + j + 1] = y[j];
                batch.tgt_keep[static_cast<std::size_t>(row * tt) + j + 1] = 1;
                tout[static_cast<std::size_t>(row * tt) + j] = y[j];
            }
            tout[static_cast<std::size_t>(row * tt) + y.size()] = Vocab::eos_id;
        }

        batch.src_ids = IdTensor({b, ts}, std::move(src));
        batch.tgt_in = IdTensor({b, tt}, std::move(tin));
        batch.tgt_out = IdTensor({b, tt}, std::move(tout));
        batch.src_pos = PositionValues::arange(b, ts);
        batch.tgt_pos = PositionValues::arange(b, tt);
        batches.push_back(std::move(batch));
    }
    return batches;
}

TokenSeq split_whitespace(const std::string& line) {
    TokenSeq out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::vector<TokenSeq> read_token_lines(const std::string& path) {
    std::ifstream in(path);
    FORGE_CHECK(in.good(), "cannot read '", path, "'");
    std::vector<TokenSeq> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(split_whitespace(line));
    return lines;
}

void write_token_lines(const std::string& path, const std::vector<TokenSeq>& lines) {
    std::ofstream out(path);
    FORGE_CHECK(out.good(), "cannot write '", path, "'");
    for (const auto& line : lines) {
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (i) out << ' ';
            out << line[i];
        }
        out << '\n';
    }
}

ParallelCorpus read_parallel_files(const std::string& src_path, const std::string& tgt_path) {
    auto src = read_token_lines(src_path);
    auto tgt = read_token_lines(tgt_path);
    FORGE_CHECK(src.size() == tgt.size(), "parallel corpus mismatch: ", src.size(), " lines in '",
                src_path, "' vs ", tgt.size(), " in '", tgt_path, "'");
    ParallelCorpus corpus;
    for (std::size_t i = 0; i < src.size(); ++i)
        corpus.pairs.emplace_back(std::move(src[i]), std::move(tgt[i]));
    return corpus;
}

} // namespace forge
