#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crnl/heads.hpp"
#include "crnl/optim.hpp"
#include "test_util.hpp"

using namespace crnl;
using testutil::random_tensor;

TEST_CASE("cap: shape, constant map, arithmetic mean") {
    Rng rng(1);
    Tensor x = random_tensor({2, 8, 4, 16}, rng, -1, 1, false);  // [b,c=8,h=4,w=16]
    auto y = cap(x);
    CHECK(y.shape() == Shape{2, 16, 8});  // [b,w,c]

    Tensor cm = Tensor::zeros({1, 3, 4, 5});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t w = 0; w < 5; ++w) cm.vec()[(c * 4 + h) * 5 + w] = real(c + 10 * w);
    auto yc = cap(cm);  // height-constant: every output equals any row
    for (int64_t w = 0; w < 5; ++w)
        for (int64_t c = 0; c < 3; ++c)
            CHECK(yc.vec()[w * 3 + c] == doctest::Approx(c + 10 * w));

    Tensor two = Tensor::from({1, 1, 2, 1}, {1.0, 3.0});
    CHECK(cap(two).vec()[0] == doctest::Approx(2.0));
}

TEST_CASE("stretch: reading order and h=1 degeneracy") {
    // encode position as value: x[0,c,r,col] = 100*c + r*3 + col  (h=2, w=3)
    Tensor x = Tensor::zeros({1, 2, 2, 3});
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t r = 0; r < 2; ++r)
            for (int64_t col = 0; col < 3; ++col)
                x.vec()[(c * 2 + r) * 3 + col] = real(100 * c + r * 3 + col);
    auto y = stretch(x);
    CHECK(y.shape() == Shape{1, 6, 2});
    for (int64_t p = 0; p < 6; ++p)
        for (int64_t c = 0; c < 2; ++c)
            CHECK(y.vec()[p * 2 + c] == doctest::Approx(100 * c + p));  // row-major order

    Rng rng(2);
    Tensor flat = random_tensor({2, 3, 1, 5}, rng, -1, 1, false);
    CHECK(stretch(flat).vec() == cap(flat).vec());  // both identity sequences at h=1
}

TEST_CASE("stretch labels concatenate per-row labels; loss matches the oracle") {
    // 2 rows of labels collapsed into one sequence, tiny logits, loss vs enumeration
    Rng rng(3);
    Tensor logits = random_tensor({5, 3}, rng, -1, 1, false);
    LabelSeq row0{{1}}, row1{{2, 1}};
    LabelSeq concat{{1, 2, 1}};
    double loss = ctc_loss(logits, concat).item();
    std::vector<double> probs(5 * 3);
    for (int64_t t = 0; t < 5; ++t) {
        double den = 0;
        for (int64_t k = 0; k < 3; ++k) den += std::exp(static_cast<double>(logits.vec()[t * 3 + k]));
        for (int64_t k = 0; k < 3; ++k)
            probs[t * 3 + k] = std::exp(static_cast<double>(logits.vec()[t * 3 + k])) / den;
    }
    CHECK(std::exp(-loss) == doctest::Approx(ctc_oracle(probs, 5, 3, concat)).epsilon(1e-9));
    CHECK(std::isfinite(loss));
}

TEST_CASE("row_attention: kernel size, mask range, zero-weight mask") {
    Rng rng(4);
    // h=8, H=7 -> kernel 2
    RowAttention att = RowAttention::make(8, 4, 3, 7, false, rng);
    CHECK(att.feature_conv.k == 2);
    Tensor x = random_tensor({2, 3, 8, 4}, rng, -1, 1, false);
    auto out = att.forward(x);
    CHECK(out.rows.shape() == Shape{2, 7, 12});
    CHECK(out.mask.shape() == Shape{2, 7, 12});
    for (real v : out.mask.vec()) {
        CHECK(v > 0);
        CHECK(v < 1);
    }

    // zero mask branch -> sigma(0) = 0.5 everywhere, output = 0.5 * x'
    std::fill(att.mask_conv.w.vec().begin(), att.mask_conv.w.vec().end(), real(0));
    std::fill(att.mask_conv.b.vec().begin(), att.mask_conv.b.vec().end(), real(0));
    auto out0 = att.forward(x);
    for (real v : out0.mask.vec()) CHECK(v == doctest::Approx(0.5));
    Tensor rows2d = reshape(transpose(x, {0, 2, 3, 1}), {2, 8, 12});
    Tensor feat = relu(att.feature_conv.forward(transpose(rows2d, {0, 2, 1})));
    Tensor half = transpose(scale(feat, 0.5), {0, 2, 1});
    CHECK(testutil::max_abs_diff(out0.rows.vec(), half.vec()) < 1e-12);

    CHECK_THROWS_AS(RowAttention::make(4, 4, 3, 7, false, rng), ShapeError);  // h < H
    CHECK_THROWS_AS(att.forward(random_tensor({1, 3, 6, 4}, rng, -1, 1, false)), ShapeError);
}

TEST_CASE("row_attention: output bounded by |x'| and alternative mask input") {
    Rng rng(5);
    RowAttention att = RowAttention::make(6, 3, 2, 4, false, rng);
    Tensor x = random_tensor({1, 2, 6, 3}, rng, -1, 1, false);
    auto out = att.forward(x);
    Tensor rows2d = reshape(transpose(x, {0, 2, 3, 1}), {1, 6, 6});
    Tensor feat = relu(att.feature_conv.forward(transpose(rows2d, {0, 2, 1})));
    Tensor featT = transpose(feat, {0, 2, 1});
    for (int64_t i = 0; i < out.rows.numel(); ++i)
        CHECK(std::abs(out.rows.vec()[i]) <= std::abs(featT.vec()[i]) + 1e-12);

    RowAttention alt = RowAttention::make(6, 3, 2, 4, true, rng);
    CHECK(alt.mask_conv.k == 1);
    auto aout = alt.forward(x);
    CHECK(aout.rows.shape() == Shape{1, 4, 6});
}

TEST_CASE("attention path passes grad_check") {
    Rng rng(6);
    RowAttention att = RowAttention::make(5, 2, 2, 3, false, rng);
    Tensor x = random_tensor({1, 2, 5, 2}, rng);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  auto out = att.forward(t);
                  return mean_all(mul(out.rows, out.rows));
              },
              x) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor&) {
                  auto out = att.forward(x.detach());
                  return mean_all(mul(out.rows, out.rows));
              },
              att.feature_conv.w) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor&) {
                  auto out = att.forward(x.detach());
                  return mean_all(mul(out.rows, out.rows));
              },
              att.mask_conv.w) < 1e-4);
}

TEST_CASE("multirow_ctc_loss: degenerate and derived cases") {
    Rng rng(7);
    // H=1 equals the plain batch mean exactly
    std::vector<std::vector<Tensor>> rows;
    std::vector<std::vector<LabelSeq>> labels;
    std::vector<Tensor> flat;
    std::vector<LabelSeq> flat_labels;
    for (int i = 0; i < 3; ++i) {
        Tensor l = random_tensor({4, 3}, rng, -1, 1, false);
        LabelSeq y{{1 + static_cast<int>(rng.next_below(2))}};
        rows.push_back({l});
        labels.push_back({y});
        flat.push_back(l);
        flat_labels.push_back(y);
    }
    CHECK(multirow_ctc_loss(rows, labels).item() ==
          doctest::Approx(ctc_loss_batch(flat, flat_labels).item()).epsilon(1e-12));

    // all rows identical -> equals the single-row loss value
    Tensor one = random_tensor({4, 3}, rng, -1, 1, false);
    LabelSeq y{{1, 2}};
    CHECK(multirow_ctc_loss({{one, one, one}}, {{y, y, y}}).item() ==
          doctest::Approx(ctc_loss(one, y).item()).epsilon(1e-12));

    // B=2, H=2: mean of the 4 oracle losses
    std::vector<std::vector<Tensor>> r2;
    std::vector<std::vector<LabelSeq>> l2;
    double sum = 0;
    for (int i = 0; i < 2; ++i) {
        std::vector<Tensor> rs;
        std::vector<LabelSeq> ls;
        for (int j = 0; j < 2; ++j) {
            Tensor t = random_tensor({3, 3}, rng, -1, 1, false);
            LabelSeq lab{{1 + static_cast<int>(rng.next_below(2))}};
            std::vector<double> probs(9);
            for (int64_t tt = 0; tt < 3; ++tt) {
                double den = 0;
                for (int64_t k = 0; k < 3; ++k)
                    den += std::exp(static_cast<double>(t.vec()[tt * 3 + k]));
                for (int64_t k = 0; k < 3; ++k)
                    probs[tt * 3 + k] = std::exp(static_cast<double>(t.vec()[tt * 3 + k])) / den;
            }
            sum += -std::log(ctc_oracle(probs, 3, 3, lab));
            rs.push_back(t);
            ls.push_back(lab);
        }
        r2.push_back(rs);
        l2.push_back(ls);
    }
    CHECK(multirow_ctc_loss(r2, l2).item() == doctest::Approx(sum / 4).epsilon(1e-9));

    CHECK_THROWS_AS(multirow_ctc_loss({{one}, {one, one}}, {{y}, {y, y}}), ContractError);
}

namespace {

CrnnSpec tiny_single_spec(HeadKind head) {
    CrnnSpec s;
    s.head = head;
    s.img_h = 32;
    s.img_w = 64;
    s.channels = {4, 8};
    s.convs_per_block = {1, 1};
    s.pools = {{2, 2}, {2, 3}};
    s.hidden = 8;
    s.lstm_layers = 1;
    s.classes = 7;
    s.rows = 1;
    return s;
}

CrnnSpec tiny_multi_spec(HeadKind head, int64_t rows) {
    CrnnSpec s;
    s.head = head;
    s.img_h = s.img_w = 64;
    s.channels = {4, 8, 8};
    s.convs_per_block = {1, 1, 1};
    s.pools = {{2, 2}, {2, 2}, {2, 2}};
    s.hidden = 8;
    s.lstm_layers = 1;
    s.classes = 7;
    s.rows = rows;
    return s;
}

}  // namespace

TEST_CASE("crnn_forward: logits shapes for every head") {
    Rng rng(8);
    {
        CrnnModel m = CrnnModel::make(tiny_single_spec(HeadKind::cap), rng);
        auto fwd = m.forward(random_tensor({2, 1, 32, 64}, rng, 0, 1, false));
        CHECK(fwd.logits.size() == 2);
        CHECK(fwd.logits[0].size() == 1);
        // w: 64 -> 32 -> 10, so T = w_final and K = classes
        CHECK(fwd.logits[0][0].shape() == Shape{10, 7});
        CHECK_THROWS_AS(m.forward(random_tensor({1, 1, 64, 64}, rng, 0, 1, false)), ShapeError);
    }
    {
        CrnnModel m = CrnnModel::make(tiny_single_spec(HeadKind::baseline), rng);
        auto fwd = m.forward(random_tensor({1, 1, 32, 64}, rng, 0, 1, false));
        CHECK(fwd.logits[0][0].shape() == Shape{10, 7});
    }
    {
        CrnnModel m = CrnnModel::make(tiny_multi_spec(HeadKind::stretch, 7), rng);
        auto fwd = m.forward(random_tensor({1, 1, 64, 64}, rng, 0, 1, false));
        CHECK(fwd.logits[0][0].shape() == Shape{64, 7});  // T = 8*8
    }
    {
        CrnnModel m = CrnnModel::make(tiny_multi_spec(HeadKind::attention, 7), rng);
        auto fwd = m.forward(random_tensor({2, 1, 64, 64}, rng, 0, 1, false));
        CHECK(fwd.logits[0].size() == 7);  // one sequence per row
        CHECK(fwd.logits[0][0].shape() == Shape{8, 7});
        CHECK(fwd.block_acts.size() == 3);
    }
}

TEST_CASE("autoencoder: shape preservation and input contract") {
    Rng rng(9);
    Autoencoder ae = Autoencoder::make(rng);
    for (int64_t s : {16, 32, 48}) {
        Tensor x = random_tensor({1, 1, s, s}, rng, 0, 1, false);
        CHECK(ae.forward(x).shape() == x.shape());
    }
    CHECK_THROWS_AS(ae.forward(random_tensor({1, 1, 24, 24}, rng, 0, 1, false)), ShapeError);
    CHECK_THROWS_AS(ae.forward(random_tensor({1, 1, 32, 16}, rng, 0, 1, false)), ShapeError);
    CHECK(ae.param_count() > 0);
}

TEST_CASE("autoencoder gradients reach encoder and decoder") {
    Rng rng(10);
    Autoencoder ae = Autoencoder::make(rng);
    Tensor x = random_tensor({1, 1, 16, 16}, rng, 0, 1, false);
    Tensor target = random_tensor({1, 1, 16, 16}, rng, -1, 0, false);
    ParamList ps = ae.params();
    zero_grads(ps);
    Tensor d = sub(ae.forward(x), target);
    backward(mean_all(mul(d, d)));
    for (const auto& p : ps) {
        REQUIRE(p.tensor.grad() != nullptr);
        real mx = 0;
        for (real g : *p.tensor.grad()) mx = std::max(mx, std::abs(g));
        INFO(p.name);
        CHECK(mx > 0);
    }
}

TEST_CASE("compose_clean: identity, removal, monotonicity") {
    Tensor v = Tensor::from({2, 2}, {1, 0, 1, 0.5});
    CHECK(compose_clean(v, Tensor::zeros({2, 2})).vec() == v.vec());

    Tensor l = Tensor::from({2, 2}, {-1, 0, 0, -0.5});
    auto clean = compose_clean(v, l);
    CHECK(clean.vec()[0] == doctest::Approx(0));  // line pixel removed
    CHECK(clean.vec()[2] == doctest::Approx(1));  // text pixel kept
    CHECK(clean.vec()[3] == doctest::Approx(0));

    CHECK_THROWS_AS(compose_clean(v, Tensor::zeros({4})), ShapeError);

    // monotone: more negative line estimate never raises a pixel
    Rng rng(11);
    Tensor vv = testutil::random_tensor({3, 3}, rng, 0, 1, false);
    Tensor l1 = testutil::random_tensor({3, 3}, rng, -1, 0, false);
    Tensor l2 = Tensor::from({3, 3}, l1.vec());
    for (auto& q : l2.vec()) q -= real(0.25);
    auto c1 = compose_clean(vv, l1), c2 = compose_clean(vv, l2);
    for (int64_t i = 0; i < 9; ++i) CHECK(c2.vec()[i] <= c1.vec()[i] + 1e-12);
}
