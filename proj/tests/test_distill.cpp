#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crnl/distill.hpp"
#include "crnl/optim.hpp"
#include "crnl/train.hpp"
#include "test_util.hpp"

using namespace crnl;
using testutil::random_tensor;

namespace {

// direct double-precision summation, independent of the tensor ops
double skd_oracle(const Tensor& s, const Tensor& t, const LabelSeq& label, const KdConfig& cfg) {
    int64_t T = s.dim(0), K = s.dim(1);
    auto softmax_row = [&](const Tensor& x, int64_t row, double temp, std::vector<double>& p) {
        double mx = -1e300;
        for (int64_t k = 0; k < K; ++k)
            mx = std::max(mx, static_cast<double>(x.vec()[row * K + k]) / temp);
        double den = 0;
        for (int64_t k = 0; k < K; ++k)
            den += std::exp(static_cast<double>(x.vec()[row * K + k]) / temp - mx);
        for (int64_t k = 0; k < K; ++k)
            p[k] = std::exp(static_cast<double>(x.vec()[row * K + k]) / temp - mx) / den;
    };
    double kl_sum = 0;
    std::vector<double> ps(K), pt(K);
    for (int64_t f = 0; f < T; ++f) {
        softmax_row(s, f, cfg.temperature, ps);
        softmax_row(t, f, cfg.temperature, pt);
        for (int64_t k = 0; k < K; ++k) kl_sum += pt[k] * (std::log(pt[k]) - std::log(ps[k]));
    }
    double soft = kl_sum / static_cast<double>(T);
    if (cfg.scale_soft_by_t2) soft *= cfg.temperature * cfg.temperature;
    double hard = ctc_loss(s, label).item();
    return cfg.alpha * hard + (1 - cfg.alpha) * soft;
}

}  // namespace

TEST_CASE("skd_loss: zero soft term on identical logits") {
    Rng rng(1);
    Tensor l = random_tensor({4, 3}, rng, -1, 1, false);
    KdConfig cfg;
    cfg.alpha = 0;  // isolate the soft term
    double v = skd_loss({{l}}, {{l.detach()}}, {{LabelSeq{{1}}}}, cfg).item();
    CHECK(v == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("soft term: unscaled KL vanishes as T grows; scaled KL hits its analytic limit") {
    Rng rng(2);
    Tensor s = random_tensor({1, 4}, rng, -1, 1, false);
    Tensor t = random_tensor({1, 4}, rng, -1, 1, false);
    double prev = 1e9;
    for (double temp : {1.0, 10.0, 100.0, 1000.0}) {
        double v = kd_soft_kl(s, t, static_cast<real>(temp), false).item();
        CHECK(v < prev + 1e-15);
        prev = v;
    }
    CHECK(prev < 1e-6);  // distributions flatten to uniform

    // with T^2 the limit is (1/2K) * sum((t~ - s~)^2) over centered logits
    double ts = 0, tt = 0;
    for (int k = 0; k < 4; ++k) {
        ts += s.vec()[k];
        tt += t.vec()[k];
    }
    double want = 0;
    for (int k = 0; k < 4; ++k) {
        double d = (t.vec()[k] - tt / 4) - (s.vec()[k] - ts / 4);
        want += d * d;
    }
    want /= 2 * 4;
    double got = kd_soft_kl(s, t, 1000.0, true).item();
    CHECK(got == doctest::Approx(want).epsilon(1e-3));
}

TEST_CASE("skd_loss matches the direct summation oracle") {
    Rng rng(3);
    KdConfig cfg;  // alpha .5, T 1.5
    for (int trial = 0; trial < 10; ++trial) {
        Tensor s = random_tensor({2, 3}, rng, -2, 2, false);
        Tensor t = random_tensor({2, 3}, rng, -2, 2, false);
        LabelSeq label{{1 + static_cast<int>(rng.next_below(2))}};
        double got = skd_loss({{s}}, {{t.detach()}}, {{label}}, cfg).item();
        CHECK(got == doctest::Approx(skd_oracle(s, t, label, cfg)).epsilon(1e-10));
    }
    CHECK_THROWS_AS(skd_loss({{Tensor::zeros({2, 3})}}, {{Tensor::zeros({3, 3})}},
                             {{LabelSeq{{1}}}}, cfg),
                    ContractError);
}

TEST_CASE("hint_loss: identity cases and gradient flow") {
    Rng rng(4);
    // identity regressor on equal activations
    Conv2d ident = Conv2d::make(1, 1, 1, 1, 1, 1, 0, 0, rng);
    ident.w.vec() = {1};
    ident.b.vec() = {0};
    Tensor a = random_tensor({1, 1, 2, 2}, rng, -1, 1, false);
    CHECK(hint_loss({{a, a}}, {ident}).item() == doctest::Approx(0));

    // scalar s=1, t=3 through the identity: (1-3)^2 = 4
    Tensor s1 = Tensor::from({1, 1, 1, 1}, {1});
    Tensor t3 = Tensor::from({1, 1, 1, 1}, {3});
    CHECK(hint_loss({{s1, t3}}, {ident}).item() == doctest::Approx(4.0));

    // gradient reaches the student activation and regressor, never the teacher
    Tensor teacher_param = random_tensor({1, 1, 2, 2}, rng, -1, 1, true);
    Tensor teacher_act = scale(teacher_param, 2);
    Tensor student_act = random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
    Conv2d reg = Conv2d::make(2, 1, 1, 1, 1, 1, 0, 0, rng);
    Tensor loss = hint_loss({{student_act, teacher_act.detach()}}, {reg});
    backward(loss);
    REQUIRE(student_act.grad() != nullptr);
    REQUIRE(reg.w.grad() != nullptr);
    CHECK(teacher_param.grad() == nullptr);

    CHECK_THROWS_AS(hint_loss({}, {}), ContractError);
    Conv2d bad = Conv2d::make(2, 3, 1, 1, 1, 1, 0, 0, rng);
    CHECK_THROWS_AS(hint_loss({{student_act, teacher_act.detach()}}, {bad}), ShapeError);
}

TEST_CASE("lstm_state_loss: zeros, single unit, explicit-loop oracle") {
    Rng rng(5);
    Tensor h = random_tensor({2, 3}, rng, -1, 1, false);
    Tensor c = random_tensor({2, 3}, rng, -1, 1, false);
    CHECK(lstm_state_loss(h, c, h, c).item() == doctest::Approx(0));

    Tensor c2 = Tensor::from({2, 3}, c.vec());
    c2.vec()[4] += 1;  // one unit differs by 1 -> loss 1/B with B=2
    CHECK(lstm_state_loss(h, c, h, c2).item() == doctest::Approx(0.5));

    Tensor th = random_tensor({2, 3}, rng, -1, 1, false);
    Tensor tc = random_tensor({2, 3}, rng, -1, 1, false);
    double want = 0;
    for (int64_t i = 0; i < 6; ++i) {
        double dc = tc.vec()[i] - c.vec()[i], dh = th.vec()[i] - h.vec()[i];
        want += dc * dc + dh * dh;
    }
    want /= 2;
    CHECK(lstm_state_loss(h, c, th, tc).item() == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(lstm_state_loss(h, c, Tensor::zeros({2, 4}), Tensor::zeros({2, 4})),
                    ContractError);
}

TEST_CASE("kd_total: reduction, defaults, linearity") {
    KdConfig cfg;
    Tensor a = Tensor::scalar(1), b = Tensor::scalar(1), c = Tensor::scalar(1);
    // defaults lambda1 .5, lambda2 .2 -> 1 + .5 + .2
    CHECK(kd_total(a, b, c, cfg).item() == doctest::Approx(1.7));
    CHECK(cfg.temperature == doctest::Approx(1.5));

    KdConfig zero = cfg;
    zero.lambda1 = zero.lambda2 = 0;
    CHECK(kd_total(Tensor::scalar(3.25), b, c, zero).item() == doctest::Approx(3.25));

    // linear in each component
    CHECK(kd_total(Tensor::scalar(2), Tensor::scalar(0), Tensor::scalar(0), cfg).item() ==
          doctest::Approx(2));
    CHECK(kd_total(Tensor::scalar(0), Tensor::scalar(2), Tensor::scalar(0), cfg).item() ==
          doctest::Approx(1.0));
    CHECK(kd_total(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(2), cfg).item() ==
          doctest::Approx(0.4));

    CHECK(train_objective(Tensor::scalar(2), Tensor::scalar(1.7)).item() == doctest::Approx(3.7));

    KdConfig bad;
    bad.temperature = 0;
    CHECK_THROWS_AS(kd_total(a, b, c, bad), ConfigError);
}

namespace {

CrnnSpec tiny_spec() {
    CrnnSpec s;
    s.head = HeadKind::cap;
    s.img_h = 16;
    s.img_w = 32;
    s.channels = {4, 8};
    s.convs_per_block = {1, 1};
    s.pools = {{2, 2}, {2, 2}};
    s.hidden = 6;
    s.lstm_layers = 2;
    s.classes = 5;
    s.rows = 1;
    return s;
}

}  // namespace

TEST_CASE("no gradient path from any KD loss into teacher parameters") {
    Rng trng(6), srng(7), rrng(8);
    CrnnModel teacher = CrnnModel::make(tiny_spec(), trng);
    CrnnSpec sspec = student_spec_from(tiny_spec());
    CrnnModel student = CrnnModel::make(sspec, srng);
    std::vector<Conv2d> regressors{Conv2d::make(sspec.channels[0], 4, 1, 1, 1, 1, 0, 0, rrng),
                                   Conv2d::make(sspec.channels[1], 8, 1, 1, 1, 1, 0, 0, rrng)};

    Rng drng(9);
    Tensor x = random_tensor({2, 1, 16, 32}, drng, 0, 1, false);
    std::vector<std::vector<LabelSeq>> labels{{LabelSeq{{1, 2}}}, {LabelSeq{{3}}}};

    auto t_fwd = teacher.forward(x);
    auto snap = snapshot_teacher(t_fwd, {0, 1});
    auto s_fwd = student.forward(x);

    KdConfig cfg;
    Tensor skd = skd_loss(s_fwd.logits, snap.logits, labels, cfg);
    Tensor mse = hint_loss({{s_fwd.block_acts[0], snap.hints[0]},
                            {s_fwd.block_acts[1], snap.hints[1]}},
                           regressors);
    Tensor lstm = lstm_state_loss(s_fwd.rnn.last_h_cat(), s_fwd.rnn.last_c_cat(), snap.last_h,
                                  snap.last_c);
    Tensor kd = kd_total(skd, mse, lstm, cfg);

    zero_grads(teacher.params());
    zero_grads(student.params());
    backward(kd);

    for (const auto& p : teacher.params()) {
        INFO(p.name);
        if (p.tensor.grad())
            for (real g : *p.tensor.grad()) CHECK(g == 0);
    }
    bool student_has_grad = false;
    for (const auto& p : student.params())
        if (p.tensor.grad())
            for (real g : *p.tensor.grad())
                if (g != 0) student_has_grad = true;
    CHECK(student_has_grad);
}

TEST_CASE("alpha=1, lambdas=0 reduces the student gradient to plain CTC") {
    Rng srng(10);
    CrnnSpec sspec = student_spec_from(tiny_spec());
    CrnnModel student = CrnnModel::make(sspec, srng);
    Rng trng(11);
    CrnnModel teacher = CrnnModel::make(tiny_spec(), trng);

    Rng drng(12);
    Tensor x = random_tensor({2, 1, 16, 32}, drng, 0, 1, false);
    std::vector<std::vector<LabelSeq>> labels{{LabelSeq{{1, 2}}}, {LabelSeq{{3}}}};

    KdConfig cfg;
    cfg.alpha = 1;
    cfg.lambda1 = cfg.lambda2 = 0;

    auto t_fwd = teacher.forward(x);
    auto snap = snapshot_teacher(t_fwd, {0, 1});
    auto s_fwd = student.forward(x);
    Tensor skd = skd_loss(s_fwd.logits, snap.logits, labels, cfg);
    Tensor lstm = lstm_state_loss(s_fwd.rnn.last_h_cat(), s_fwd.rnn.last_c_cat(), snap.last_h,
                                  snap.last_c);
    Tensor mse = Tensor::scalar(0);
    zero_grads(student.params());
    backward(kd_total(skd, mse, lstm, cfg));
    std::vector<std::vector<real>> kd_grads;
    for (const auto& p : student.params())
        kd_grads.push_back(p.tensor.grad() ? *p.tensor.grad()
                                           : std::vector<real>(p.tensor.numel(), 0));

    auto s_fwd2 = student.forward(x);
    Tensor plain = multirow_ctc_loss(s_fwd2.logits, labels);
    zero_grads(student.params());
    backward(plain);
    size_t i = 0;
    for (const auto& p : student.params()) {
        const auto& got = p.tensor.grad() ? *p.tensor.grad()
                                          : std::vector<real>(p.tensor.numel(), 0);
        CHECK(testutil::max_abs_diff(kd_grads[i++], got) < 1e-12);
    }
}
