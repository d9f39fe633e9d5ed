#pragma once

// Connectionist Temporal Classification: log-space forward/backward loss,
// greedy best-path decoding, and an exhaustive path-enumeration oracle.
// Blank is class 0 everywhere.

#include <vector>

#include "crnl/tensor.hpp"

namespace crnl {

constexpr int kBlank = 0;

struct LabelSeq {
    std::vector<int> classes;  // no blanks, each in [1, K-1]

    bool operator==(const LabelSeq&) const = default;
    int64_t size() const { return static_cast<int64_t>(classes.size()); }
    // number of adjacent repeats; feasibility needs T >= size() + repeats
    int64_t adjacent_repeats() const;
};

// -log P(label | softmax(logits)) for one example, logits[T,K].
// Differentiable (analytic alpha/beta backward). Throws InfeasibleLabelError
// when T < L + repeats.
Tensor ctc_loss(const Tensor& logits, const LabelSeq& label);

// Mean loss over a batch of examples (the 1/B reduction).
Tensor ctc_loss_batch(const std::vector<Tensor>& logits, const std::vector<LabelSeq>& labels);

// Exhaustive oracle: total probability over all K^T paths whose collapse
// (merge repeats, drop blanks) equals label. probs are plain probabilities,
// row-major [T,K]. Enforces K^T <= 10^7.
double ctc_oracle(const std::vector<double>& probs, int64_t T, int64_t K, const LabelSeq& label);

// merge repeats, then drop blanks
LabelSeq collapse_path(const std::vector<int>& path);

// per-frame argmax (ties to the lowest class), collapse, drop blanks
LabelSeq greedy_decode(const Tensor& logits);

}  // namespace crnl
