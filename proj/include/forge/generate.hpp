#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "forge/model.hpp"

namespace forge {

// Log-probabilities over the target vocabulary for the next token, given the
// tokens generated so far (bos excluded). Generators are written against this
// interface so tests can drive them with rigged distributions.
using StepFn = std::function<std::vector<double>(const std::vector<std::int32_t>& prefix)>;

struct GenerateOptions {
    int max_len = 32;
    std::int32_t eos_id = 2;
    std::vector<std::int32_t> banned; // never emitted (bos, pad)
    int width = 1;
    double length_penalty = 0.0; // alpha in score / max(1, len)^alpha
};

// Appends the argmax token each step (ties to the lowest id) until eos or
// max_len. The result never contains eos.
std::vector<std::int32_t> greedy_decode_steps(const StepFn& step, const GenerateOptions& opts);

// Breadth-limited best-first search. Each step ranks every expansion of every
// live hypothesis (including its eos expansion) by cumulative log-probability,
// keeps the top `width`, and retires the finished ones. Hypotheses reaching
// max_len finish without an eos term. The answer maximizes
// score / max(1, length)^alpha, ties broken lexicographically by token ids.
// Width 1 reproduces greedy_decode_steps exactly.
std::vector<std::int32_t> beam_search_steps(const StepFn& step, const GenerateOptions& opts);

// Encodes src once and decodes step by step with teacher-forced re-runs.
StepFn model_step_fn(const Seq2SeqModel& model, const std::vector<std::int32_t>& src_ids,
                     std::int32_t bos_id);

std::vector<std::int32_t> greedy_decode(const Seq2SeqModel& model,
                                        const std::vector<std::int32_t>& src_ids, int max_len,
                                        std::int32_t bos_id, std::int32_t eos_id);

std::vector<std::int32_t> beam_search(const Seq2SeqModel& model,
                                      const std::vector<std::int32_t>& src_ids, int width,
                                      int max_len, double length_penalty, std::int32_t bos_id,
                                      std::int32_t eos_id);

// Greedy decode over a whole batch at once; per-sequence results equal the
// one-at-a-time path (padding is masked out exactly).
std::vector<std::vector<std::int32_t>> greedy_decode_batch(
    const Seq2SeqModel& model, const std::vector<std::vector<std::int32_t>>& src_seqs, int max_len,
    std::int32_t pad_id, std::int32_t bos_id, std::int32_t eos_id);

} // namespace forge
