#include "crnl/ctc.hpp"

#include <cmath>
#include <limits>

namespace crnl {

static constexpr double kLogZero = -std::numeric_limits<double>::infinity();

static double log_add(double a, double b) {
    if (a == kLogZero) return b;
    if (b == kLogZero) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

int64_t LabelSeq::adjacent_repeats() const {
    int64_t r = 0;
    for (size_t i = 1; i < classes.size(); ++i)
        if (classes[i] == classes[i - 1]) ++r;
    return r;
}

static void check_label(const LabelSeq& label, int64_t K) {
    for (int c : label.classes)
        if (c <= kBlank || c >= K)
            throw ContractError("ctc: label class " + std::to_string(c) + " outside [1," +
                                std::to_string(K - 1) + "]");
}

Tensor ctc_loss(const Tensor& logits, const LabelSeq& label) {
    if (logits.ndim() != 2)
        throw ShapeError("ctc_loss: expected logits[T,K], got " + shape_str(logits.shape()));
    int64_t T = logits.dim(0), K = logits.dim(1);
    if (K < 2) throw ShapeError("ctc_loss: need at least blank plus one class");
    check_label(label, K);
    int64_t L = label.size();
    int64_t need = L + label.adjacent_repeats();
    if (T < need)
        throw InfeasibleLabelError("ctc_loss: label of length " + std::to_string(L) + " with " +
                                   std::to_string(label.adjacent_repeats()) +
                                   " repeats needs T >= " + std::to_string(need) + ", got " +
                                   std::to_string(T));

    // extended label: blanks interleaved, length S = 2L+1
    int64_t S = 2 * L + 1;
    std::vector<int> ext(S, kBlank);
    for (int64_t i = 0; i < L; ++i) ext[2 * i + 1] = label.classes[i];

    // log-softmax rows
    const real* u = logits.data();
    std::vector<double> lp(T * K);
    for (int64_t t = 0; t < T; ++t) {
        double mx = u[t * K];
        for (int64_t k = 1; k < K; ++k) mx = std::max<double>(mx, u[t * K + k]);
        double den = 0;
        for (int64_t k = 0; k < K; ++k) den += std::exp(static_cast<double>(u[t * K + k]) - mx);
        double lden = std::log(den) + mx;
        for (int64_t k = 0; k < K; ++k) lp[t * K + k] = static_cast<double>(u[t * K + k]) - lden;
    }

    std::vector<double> alpha(T * S, kLogZero);
    alpha[0] = lp[kBlank];
    if (S > 1) alpha[1] = lp[ext[1]];
    for (int64_t t = 1; t < T; ++t)
        for (int64_t s = 0; s < S; ++s) {
            double a = alpha[(t - 1) * S + s];
            if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
            if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2])
                a = log_add(a, alpha[(t - 1) * S + s - 2]);
            alpha[t * S + s] = a + lp[t * K + ext[s]];
        }
    double log_p = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
    real loss = static_cast<real>(-log_p);

    auto li = logits;
    return make_op_output(
        "ctc_loss", {1}, {loss}, {logits},
        [li, lp = std::move(lp), alpha = std::move(alpha), ext = std::move(ext), T, K, S,
         log_p](const std::vector<real>& g, BackContext& ctx) {
            if (!li.requires_grad()) return;
            std::vector<double> beta(T * S, kLogZero);
            beta[(T - 1) * S + S - 1] = 0;
            if (S > 1) beta[(T - 1) * S + S - 2] = 0;
            for (int64_t t = T - 2; t >= 0; --t)
                for (int64_t s = 0; s < S; ++s) {
                    double b = beta[(t + 1) * S + s] + lp[(t + 1) * K + ext[s]];
                    if (s + 1 < S)
                        b = log_add(b, beta[(t + 1) * S + s + 1] + lp[(t + 1) * K + ext[s + 1]]);
                    if (s + 2 < S && ext[s + 2] != kBlank && ext[s + 2] != ext[s])
                        b = log_add(b, beta[(t + 1) * S + s + 2] + lp[(t + 1) * K + ext[s + 2]]);
                    beta[t * S + s] = b;
                }
            auto& gl = ctx.slot_for(li.impl().get());
            real gup = g[0];
            for (int64_t t = 0; t < T; ++t) {
                std::vector<double> occ(K, kLogZero);
                for (int64_t s = 0; s < S; ++s)
                    occ[ext[s]] = log_add(occ[ext[s]], alpha[t * S + s] + beta[t * S + s]);
                for (int64_t k = 0; k < K; ++k) {
                    double y = std::exp(lp[t * K + k]);
                    double post = occ[k] == kLogZero ? 0.0 : std::exp(occ[k] - log_p);
                    gl[t * K + k] += gup * static_cast<real>(y - post);
                }
            }
        });
}

Tensor ctc_loss_batch(const std::vector<Tensor>& logits, const std::vector<LabelSeq>& labels) {
    if (logits.empty() || logits.size() != labels.size())
        throw ContractError("ctc_loss_batch: need matching non-empty logits/labels lists");
    std::vector<Tensor> losses;
    losses.reserve(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) losses.push_back(ctc_loss(logits[i], labels[i]));
    return mean_all(concat(losses, 0));
}

LabelSeq collapse_path(const std::vector<int>& path) {
    LabelSeq out;
    int prev = -1;
    for (int c : path) {
        if (c != prev && c != kBlank) out.classes.push_back(c);
        prev = c;
    }
    return out;
}

double ctc_oracle(const std::vector<double>& probs, int64_t T, int64_t K, const LabelSeq& label) {
    if (T < 1 || K < 2 || static_cast<int64_t>(probs.size()) != T * K)
        throw ShapeError("ctc_oracle: bad probs buffer for T=" + std::to_string(T) +
                         " K=" + std::to_string(K));
    double paths = std::pow(static_cast<double>(K), static_cast<double>(T));
    if (paths > 1e7)
        throw OracleSizeError("ctc_oracle: K^T = " + std::to_string(paths) + " exceeds 10^7");

    std::vector<int> path(T, 0);
    double total = 0;
    for (;;) {
        double p = 1;
        for (int64_t t = 0; t < T; ++t) p *= probs[t * K + path[t]];
        if (collapse_path(path) == label) total += p;
        // odometer increment
        int64_t t = T - 1;
        while (t >= 0 && ++path[t] == K) path[t--] = 0;
        if (t < 0) break;
    }
    return total;
}

LabelSeq greedy_decode(const Tensor& logits) {
    if (logits.ndim() != 2)
        throw ShapeError("greedy_decode: expected logits[T,K], got " + shape_str(logits.shape()));
    int64_t T = logits.dim(0), K = logits.dim(1);
    const real* u = logits.data();
    std::vector<int> best(T);
    for (int64_t t = 0; t < T; ++t) {
        int arg = 0;
        real bv = u[t * K];
        for (int64_t k = 1; k < K; ++k)
            if (u[t * K + k] > bv) {  // strict keeps ties at the lowest index
                bv = u[t * K + k];
                arg = static_cast<int>(k);
            }
        best[t] = arg;
    }
    return collapse_path(best);
}

}  // namespace crnl
