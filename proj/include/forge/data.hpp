#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "forge/ops.hpp"
#include "forge/positional.hpp"

namespace forge {

using TokenSeq = std::vector<std::string>;

// Token <-> id map with fixed reserved ids.
struct Vocab {
    static constexpr std::int32_t pad_id = 0;
    static constexpr std::int32_t bos_id = 1;
    static constexpr std::int32_t eos_id = 2;
    static constexpr std::int32_t unk_id = 3;

    std::vector<std::string> id_to_token; // [0..3] reserved
    std::unordered_map<std::string, std::int32_t> token_to_id;

    // Lexicographically sorted unique tokens after the reserved block, so the
    // mapping is independent of corpus order.
    static Vocab from_tokens(const std::vector<TokenSeq>& lines);
    // Token k is the decimal string of id k for k in [4, size): the id space
    // of toy corpora, where mappings like shift ciphers read off directly.
    static Vocab identity(std::int32_t size);

    std::int32_t id(const std::string& token) const; // unk if absent
    const std::string& token(std::int32_t id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(id_to_token.size()); }
};

struct ParallelCorpus {
    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;

    std::size_t size() const { return pairs.size(); }
};

// Drops pairs where either side, after bos/eos framing, exceeds max_len
// tokens (a side of exactly max_len survives). Returns the kept corpus and
// the dropped count.
std::pair<ParallelCorpus, std::int64_t> filter_by_context(const ParallelCorpus& corpus,
                                                          std::int64_t max_len);

enum class ToyTask { copy, reverse, shift_cipher };
ToyTask toy_task_from_name(const std::string& name);
const char* toy_task_name(ToyTask t);

// Deterministic synthetic translation corpus over the identity vocab: target
// is an exact function of the source, so an oracle model reaches BLEU 100.
// shift_cipher maps id -> 4 + ((id - 4 + 1) mod (vocab_size - 4)).
ParallelCorpus make_toy_corpus(ToyTask task, std::int64_t vocab_size, std::int64_t min_len,
                               std::int64_t max_len, std::int64_t n_pairs, std::uint64_t seed);

// One padded training batch.
// tgt_in  = bos, y1..yn, pad...      tgt_out = y1..yn, eos, pad...
struct Batch {
    IdTensor src_ids;  // [B, Ts] with bos/eos framing
    IdTensor tgt_in;   // [B, Tt]
    IdTensor tgt_out;  // [B, Tt], pad positions ignored by the loss
    PositionValues src_pos, tgt_pos;
    std::vector<std::uint8_t> src_keep, tgt_keep; // 1 = real token
};

// Seeded shuffle, then fixed-size batches padded to the per-batch maximum.
std::vector<Batch> batchify(const ParallelCorpus& corpus, const Vocab& src_vocab,
                            const Vocab& tgt_vocab, std::int64_t batch_size, std::int64_t max_len,
                            std::uint64_t seed);

// Corpus files: two aligned UTF-8 text files, one sentence per line,
// whitespace tokenized.
TokenSeq split_whitespace(const std::string& line);
std::vector<TokenSeq> read_token_lines(const std::string& path);
void write_token_lines(const std::string& path, const std::vector<TokenSeq>& lines);
ParallelCorpus read_parallel_files(const std::string& src_path, const std::string& tgt_path);

} // namespace forge
