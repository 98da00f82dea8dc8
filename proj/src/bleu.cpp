#include "forge/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace forge {

BleuSmoothing bleu_smoothing_from_name(const std::string& name) {
    if (name == "none") return BleuSmoothing::none;
    if (name == "add_one_on_zero") return BleuSmoothing::add_one_on_zero;
    throw DataError(format_msg("unknown BLEU smoothing '", name,
                               "'; valid: none, add_one_on_zero"));
}

namespace {

// n-grams joined on an unprintable separator
std::unordered_map<std::string, std::int64_t> ngram_counts(const TokenSeq& seq, int n) {
    std::unordered_map<std::string, std::int64_t> counts;
    if (static_cast<int>(seq.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += seq[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

} // namespace

double bleu_corpus(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<TokenSeq>& references, int max_n, BleuSmoothing smoothing) {
    FORGE_CHECK(!hypotheses.empty(), "bleu_corpus: empty corpus");
    FORGE_CHECK(hypotheses.size() == references.size(), "bleu_corpus: ", hypotheses.size(),
                " hypotheses vs ", references.size(), " references");
    FORGE_CHECK(max_n >= 1, "bleu_corpus: max_n must be >= 1");

    std::vector<std::int64_t> match(static_cast<std::size_t>(max_n), 0);
    std::vector<std::int64_t> total(static_cast<std::size_t>(max_n), 0);
    std::int64_t hyp_len = 0, ref_len = 0;

    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& hyp = hypotheses[i];
        const auto& ref = references[i];
        hyp_len += static_cast<std::int64_t>(hyp.size());
        ref_len += static_cast<std::int64_t>(ref.size());
        for (int n = 1; n <= max_n; ++n) {
            auto hyp_counts = ngram_counts(hyp, n);
            auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : hyp_counts) {
                total[static_cast<std::size_t>(n - 1)] += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end())
                    match[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }

    if (hyp_len == 0) return 0.0;

    double log_sum = 0.0;
    int used = 0;
    for (int n = 1; n <= max_n; ++n) {
        const std::int64_t t = total[static_cast<std::size_t>(n - 1)];
        std::int64_t m = match[static_cast<std::size_t>(n - 1)];
        if (t == 0) continue; // no n-grams of this order exist in the corpus
        double p;
        if (m == 0) {
            if (smoothing == BleuSmoothing::none) return 0.0;
            p = 1.0 / static_cast<double>(t + 1);
        } else {
            p = static_cast<double>(m) / static_cast<double>(t);
        }
        log_sum += std::log(p);
        ++used;
    }
    if (used == 0) return 0.0;

    const double geo = std::exp(log_sum / static_cast<double>(used));
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * geo;
}

double bleu_corpus_ids(const std::vector<std::vector<std::int32_t>>& hypotheses,
                       const std::vector<std::vector<std::int32_t>>& references, int max_n,
                       BleuSmoothing smoothing) {
    auto render = [](const std::vector<std::vector<std::int32_t>>& seqs) {
        std::vector<TokenSeq> out;
        out.reserve(seqs.size());
        for (const auto& seq : seqs) {
            TokenSeq line;
            line.reserve(seq.size());
            for (auto id : seq) line.push_back(std::to_string(id));
            out.push_back(std::move(line));
        }
        return out;
    };
    return bleu_corpus(render(hypotheses), render(references), max_n, smoothing);
}

} // namespace forge
