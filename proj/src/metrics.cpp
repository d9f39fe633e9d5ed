#include "crnl/metrics.hpp"

#include <algorithm>
#include <fstream>

namespace crnl {

static void check_lists(const char* op, const std::vector<LabelSeq>& preds,
                        const std::vector<LabelSeq>& gts) {
    if (preds.size() != gts.size())
        throw ContractError(std::string(op) + ": " + std::to_string(preds.size()) +
                            " predictions vs " + std::to_string(gts.size()) + " ground truths");
}

double clp(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts) {
    check_lists("clp", preds, gts);
    int64_t hits = 0, total = 0;
    for (size_t i = 0; i < gts.size(); ++i) {
        total += gts[i].size();
        int64_t n = std::min(preds[i].size(), gts[i].size());
        for (int64_t j = 0; j < n; ++j)
            if (preds[i].classes[j] == gts[i].classes[j]) ++hits;
    }
    return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double ilp(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts) {
    check_lists("ilp", preds, gts);
    if (gts.empty()) return 1.0;
    int64_t exact = 0;
    for (size_t i = 0; i < gts.size(); ++i)
        if (preds[i] == gts[i]) ++exact;
    return static_cast<double>(exact) / static_cast<double>(gts.size());
}

int64_t levenshtein(const LabelSeq& a, const LabelSeq& b) {
    int64_t n = a.size(), m = b.size();
    std::vector<int64_t> row(m + 1);
    for (int64_t j = 0; j <= m; ++j) row[j] = j;
    for (int64_t i = 1; i <= n; ++i) {
        int64_t diag = row[0];
        row[0] = i;
        for (int64_t j = 1; j <= m; ++j) {
            int64_t cost = a.classes[i - 1] == b.classes[j - 1] ? 0 : 1;
            int64_t next = std::min({row[j] + 1, row[j - 1] + 1, diag + cost});
            diag = row[j];
            row[j] = next;
        }
    }
    return row[m];
}

double edit_rate(const std::vector<LabelSeq>& preds, const std::vector<LabelSeq>& gts) {
    check_lists("edit_rate", preds, gts);
    int64_t dist = 0, total = 0;
    for (size_t i = 0; i < gts.size(); ++i) {
        dist += levenshtein(preds[i], gts[i]);
        total += gts[i].size();
    }
    return total == 0 ? 0.0 : static_cast<double>(dist) / static_cast<double>(total);
}

static std::string seq_str(const LabelSeq& s) {
    std::string out;
    for (size_t i = 0; i < s.classes.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(s.classes[i]);
    }
    return out;
}

void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IoError("write_eval_csv: cannot open " + path);
    f << "example_id,row,gt,pred,char_hits,exact\n";
    for (const auto& r : records)
        f << r.example_id << ',' << r.row << ',' << seq_str(r.gt) << ',' << seq_str(r.pred) << ','
          << r.char_hits << ',' << (r.exact ? 1 : 0) << '\n';
}

}  // namespace crnl
