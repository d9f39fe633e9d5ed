#include "crnl/distill.hpp"

namespace crnl {

void KdConfig::validate() const {
    if (!(temperature > 0)) throw ConfigError("kd: temperature must be positive");
    if (lambda1 < 0 || lambda2 < 0) throw ConfigError("kd: lambda weights must be >= 0");
    if (alpha < 0 || alpha > 1) throw ConfigError("kd: alpha must lie in [0,1]");
}

TeacherSnapshot snapshot_teacher(const CrnnForward& fwd, const std::vector<int>& hint_blocks) {
    TeacherSnapshot snap;
    snap.logits.resize(fwd.logits.size());
    for (size_t i = 0; i < fwd.logits.size(); ++i)
        for (const auto& row : fwd.logits[i]) snap.logits[i].push_back(row.detach());
    for (int bi : hint_blocks) {
        if (bi < 0 || bi >= static_cast<int>(fwd.block_acts.size()))
            throw ContractError("snapshot_teacher: hint block " + std::to_string(bi) +
                                " out of range");
        snap.hints.push_back(fwd.block_acts[bi].detach());
    }
    snap.last_h = fwd.rnn.last_h_cat().detach();
    snap.last_c = fwd.rnn.last_c_cat().detach();
    return snap;
}

Tensor kd_soft_kl(const Tensor& student_logits, const Tensor& teacher_logits, real temperature,
                  bool scale_by_t2) {
    if (student_logits.shape() != teacher_logits.shape())
        throw ContractError("kd_soft_kl: logit shapes " + shape_str(student_logits.shape()) +
                            " and " + shape_str(teacher_logits.shape()) + " differ");
    int64_t frames = student_logits.dim(0);
    Tensor log_q = log_softmax_over_axis(scale(student_logits, real(1) / temperature), 1);
    Tensor t_scaled = scale(teacher_logits, real(1) / temperature);
    Tensor p = softmax_over_axis(t_scaled, 1);
    Tensor log_p = log_softmax_over_axis(t_scaled, 1);
    Tensor kl = scale(sum_all(mul(p, sub(log_p, log_q))), real(1) / static_cast<real>(frames));
    return scale_by_t2 ? scale(kl, temperature * temperature) : kl;
}

// per-frame cross entropy against the teacher's argmax classes
static Tensor hard_vs_teacher_argmax(const Tensor& student_logits, const Tensor& teacher_logits) {
    int64_t T = student_logits.dim(0), K = student_logits.dim(1);
    Tensor pick = Tensor::zeros({T, K});
    const real* tl = teacher_logits.data();
    for (int64_t t = 0; t < T; ++t) {
        int64_t arg = 0;
        for (int64_t k = 1; k < K; ++k)
            if (tl[t * K + k] > tl[t * K + arg]) arg = k;
        pick.vec()[t * K + arg] = 1;
    }
    Tensor log_q = log_softmax_over_axis(student_logits, 1);
    return scale(sum_all(mul(pick, log_q)), real(-1) / static_cast<real>(T));
}

Tensor skd_loss(const std::vector<std::vector<Tensor>>& student_logits,
                const std::vector<std::vector<Tensor>>& teacher_logits,
                const std::vector<std::vector<LabelSeq>>& labels, const KdConfig& cfg) {
    cfg.validate();
    if (student_logits.empty() || student_logits.size() != teacher_logits.size() ||
        student_logits.size() != labels.size())
        throw ContractError("skd_loss: batch sizes differ");

    std::vector<Tensor> soft_terms, hard_terms;
    std::vector<Tensor> flat_student;
    std::vector<LabelSeq> flat_labels;
    for (size_t i = 0; i < student_logits.size(); ++i) {
        if (student_logits[i].size() != teacher_logits[i].size() ||
            student_logits[i].size() != labels[i].size())
            throw ContractError("skd_loss: row counts differ at example " + std::to_string(i));
        for (size_t r = 0; r < student_logits[i].size(); ++r) {
            soft_terms.push_back(kd_soft_kl(student_logits[i][r], teacher_logits[i][r],
                                            cfg.temperature, cfg.scale_soft_by_t2));
            if (cfg.hard_from_teacher_argmax)
                hard_terms.push_back(
                    hard_vs_teacher_argmax(student_logits[i][r], teacher_logits[i][r]));
            else {
                flat_student.push_back(student_logits[i][r]);
                flat_labels.push_back(labels[i][r]);
            }
        }
    }
    Tensor soft = mean_all(concat(soft_terms, 0));
    Tensor hard = cfg.hard_from_teacher_argmax ? mean_all(concat(hard_terms, 0))
                                               : ctc_loss_batch(flat_student, flat_labels);
    return add(scale(hard, cfg.alpha), scale(soft, real(1) - cfg.alpha));
}

Tensor hint_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                 const std::vector<Conv2d>& regressors) {
    if (pairs.empty()) throw ContractError("hint_loss: need at least one pair");
    if (pairs.size() != regressors.size())
        throw ContractError("hint_loss: " + std::to_string(pairs.size()) + " pairs vs " +
                            std::to_string(regressors.size()) + " regressors");
    std::vector<Tensor> terms;
    for (size_t i = 0; i < pairs.size(); ++i) {
        Tensor mapped = regressors[i].forward(pairs[i].first);
        if (mapped.shape() != pairs[i].second.shape())
            throw ShapeError("hint_loss: regressed student " + shape_str(mapped.shape()) +
                             " vs teacher " + shape_str(pairs[i].second.shape()));
        Tensor d = sub(mapped, pairs[i].second);
        terms.push_back(mean_all(mul(d, d)));
    }
    return mean_all(concat(terms, 0));
}

Tensor lstm_state_loss(const Tensor& student_h, const Tensor& student_c, const Tensor& teacher_h,
                       const Tensor& teacher_c) {
    if (student_h.shape() != teacher_h.shape() || student_c.shape() != teacher_c.shape())
        throw ContractError("lstm_state_loss: state shapes differ (" +
                            shape_str(student_h.shape()) + " vs " + shape_str(teacher_h.shape()) +
                            "); teacher and student must share hidden dimensions");
    int64_t batch = student_h.dim(0);
    Tensor dh = sub(teacher_h, student_h);
    Tensor dc = sub(teacher_c, student_c);
    Tensor total = add(sum_all(mul(dc, dc)), sum_all(mul(dh, dh)));
    return scale(total, real(1) / static_cast<real>(batch));
}

Tensor kd_total(const Tensor& skd, const Tensor& mse, const Tensor& lstm, const KdConfig& cfg) {
    cfg.validate();
    return add(add(skd, scale(mse, cfg.lambda1)), scale(lstm, cfg.lambda2));
}

Tensor train_objective(const Tensor& ctc, const Tensor& kd) { return add(ctc, kd); }

}  // namespace crnl
