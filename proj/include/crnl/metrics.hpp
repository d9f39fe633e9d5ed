#pragma once

// Character-level and image-level precision, plus an auxiliary
// edit-distance rate (clearly not one of the two headline metrics).

#include <string>
#include <vector>

#include "crnl/ctc.hpp"

namespace crnl {

struct EvalRecord {
    int64_t example_id = 0;
    int row = 0;
    LabelSeq gt, pred;
    int64_t char_hits = 0;
    bool exact = false;
};

struct EvalResult {
    double clp = 0, ilp = 0;
    double edit_rate = 0;  // auxiliary: levenshtein distance / gt chars
    std::vector<EvalRecord> records;
};

// positionwise hits up to min(len) over total ground-truth characters
double clp(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts);

// fraction of entries with exact sequence equality
double ilp(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts);

// auxiliary, not positionwise: total edit distance / total gt characters
double edit_rate(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts);

int64_t levenshtein(const LabelSeq& a, const LabelSeq& b);

// columns: example_id, row, gt, pred, char_hits, exact
void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& records);

}  // namespace crnl
