#pragma once

// Online knowledge distillation: softened-logit KL, FitNets-style hint
// regression through 1x1 regressors, and BiLSTM final-state matching.
// Teacher signals enter every loss only as detached snapshots, so no
// gradient can reach teacher parameters.

#include <vector>

#include "crnl/heads.hpp"

namespace crnl {

struct KdConfig {
    real alpha = 0.5;        // hard/soft tradeoff in the SKD term
    real lambda1 = 0.5;      // hint (mse) weight
    real lambda2 = 0.2;      // lstm-state weight
    real temperature = 1.5;  // > 0
    bool scale_soft_by_t2 = true;      // keep soft gradients comparable across T
    bool hard_from_teacher_argmax = false;  // alternative hard term (per-frame CE)

    void validate() const;
};

// Detached (gradient-stopped) copies of everything the student trains
// against. hint order matches the block pairs handed to hint_loss.
struct TeacherSnapshot {
    std::vector<std::vector<Tensor>> logits;  // [example][row] -> [T,K]
    std::vector<Tensor> hints;                // chosen block activations
    Tensor last_h;                            // [b, 2*hidden]
    Tensor last_c;
};

// Snapshot the given block activations plus logits and final LSTM state.
TeacherSnapshot snapshot_teacher(const CrnnForward& fwd, const std::vector<int>& hint_blocks);

// Per-frame soft-target divergence, mean over frames:
// KL(softmax(t/T) || softmax(s/T)), optionally scaled by T^2.
Tensor kd_soft_kl(const Tensor& student_logits, const Tensor& teacher_logits, real temperature,
                  bool scale_by_t2);

// alpha * hard + (1-alpha) * soft over a batch. Hard is the student CTC loss
// on the labels (or per-frame CE against teacher argmax in alternative mode);
// soft is the frame-averaged KL above, averaged over examples and rows.
Tensor skd_loss(const std::vector<std::vector<Tensor>>& student_logits,
                const std::vector<std::vector<Tensor>>& teacher_logits,
                const std::vector<std::vector<LabelSeq>>& labels, const KdConfig& cfg);

// (1/M) sum over pairs of elementwise mean squared error between
// regressor(student activation) and the detached teacher activation.
Tensor hint_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                 const std::vector<Conv2d>& regressors);

// (1/B) sum over the batch of squared final-state differences, summed over
// hidden units, for both c and h.
Tensor lstm_state_loss(const Tensor& student_h, const Tensor& student_c, const Tensor& teacher_h,
                       const Tensor& teacher_c);

// L_KD = L_SKD + lambda1 * L_mse + lambda2 * L_lstm
Tensor kd_total(const Tensor& skd, const Tensor& mse, const Tensor& lstm, const KdConfig& cfg);

// L = L_ctc + L_KD
Tensor train_objective(const Tensor& ctc, const Tensor& kd);

}  // namespace crnl
