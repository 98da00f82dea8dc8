#pragma once

#include <vector>

#include "forge/data.hpp"

namespace forge {

enum class BleuSmoothing { none, add_one_on_zero };

BleuSmoothing bleu_smoothing_from_name(const std::string& name);

// Corpus-level BLEU on the 0-100 scale with one reference per hypothesis:
// clipped modified n-gram precisions p_1..p_max_n, geometric mean, brevity
// penalty min(1, e^(1 - r/c)).
//
// Conventions: orders with no hypothesis n-grams at all are excluded from the
// geometric mean (so identical corpora score 100 even for short sentences).
// With smoothing none, any present order with zero matches gives 0; with
// add_one_on_zero such orders score (0+1)/(total+1) instead.
double bleu_corpus(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<TokenSeq>& references, int max_n = 4,
                   BleuSmoothing smoothing = BleuSmoothing::none);

// Convenience over id sequences (ids rendered as decimal tokens).
double bleu_corpus_ids(const std::vector<std::vector<std::int32_t>>& hypotheses,
                       const std::vector<std::vector<std::int32_t>>& references, int max_n = 4,
                       BleuSmoothing smoothing = BleuSmoothing::none);

} // namespace forge
