#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crnl/tensor.hpp"
#include "test_util.hpp"

using namespace crnl;
using testutil::random_tensor;

TEST_CASE("forward suite basics") {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({2}, {3, 4});
    auto s = add(a, b);
    CHECK(s.vec() == std::vector<real>{4, 6});

    auto sm = softmax_over_axis(Tensor::from({2}, {0, 0}), 0);
    CHECK(sm.vec()[0] == doctest::Approx(0.5));
    CHECK(sm.vec()[1] == doctest::Approx(0.5));

    auto mm = matmul(Tensor::full({2, 3}, 1), Tensor::full({3, 2}, 1));
    for (real v : mm.vec()) CHECK(v == doctest::Approx(3.0));

    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    } catch (const ShapeError& e) {
        // dimension errors name the op and both shapes
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("backward: elementwise square and sigmoid") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum_all(mul(x, x)));
    REQUIRE(x.grad());
    CHECK((*x.grad()) == std::vector<real>{2, 4, 6});

    Tensor z = Tensor::from({1}, {0}, true);
    backward(sigmoid(z));
    CHECK((*z.grad())[0] == doctest::Approx(0.25));

    CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ContractError);
}

TEST_CASE("backward twice accumulates exactly 2x") {
    Tensor x = Tensor::from({3}, {1, -2, 3}, true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    auto once = *x.grad();
    backward(loss);
    auto twice = *x.grad();
    for (size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == 2 * once[i]);
}

TEST_CASE("leaf used twice accumulates additively") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    backward(sum_all(add(x, x)));
    CHECK((*x.grad()) == std::vector<real>{2, 2});
}

TEST_CASE("reshape/transpose round-trips are bit-exact") {
    Rng rng(3);
    Tensor x = random_tensor({3, 4, 5}, rng, -10, 10, false);
    auto r = reshape(reshape(x, {5, 12}), {3, 4, 5});
    CHECK(r.vec() == x.vec());
    auto t = transpose(transpose(x, {2, 0, 1}), {1, 2, 0});
    CHECK(t.vec() == x.vec());
}

TEST_CASE("grad_check: linear f is exact, relu kink is excluded") {
    Rng rng(5);
    Tensor x = random_tensor({7}, rng);
    CHECK(grad_check([](const Tensor& t) { return sum_all(t); }, x) < 1e-9);

    Tensor k = Tensor::from({3}, {-1, 0, 1}, true);
    // kink sits exactly at 0: that coordinate is excluded, the rest must pass
    CHECK(grad_check([](const Tensor& t) { return sum_all(relu(t)); }, k) < 1e-6);
}

TEST_CASE("grad_check across the forward suite on random small tensors") {
    Rng rng(42);
    auto run = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Shape shape,
                   double lo = -1, double hi = 1) {
        for (int trial = 0; trial < 50; ++trial) {
            Tensor x = random_tensor(shape, rng, lo, hi);
            double err = grad_check(f, x);
            INFO(name << " trial " << trial);
            CHECK(err < 1e-4);
        }
    };

    Rng wrng(77);
    Tensor other = random_tensor({3, 4}, wrng, -1, 1, false);
    Tensor mat = random_tensor({4, 3}, wrng, -1, 1, false);

    run("add", [&](const Tensor& t) { return sum_all(mul(add(t, other), other)); }, {3, 4});
    run("add_broadcast",
        [&](const Tensor& t) { return sum_all(mul(add(other, reshape(t, {4})), other)); }, {4});
    run("sub", [&](const Tensor& t) { return sum_all(mul(sub(t, other), other)); }, {3, 4});
    run("mul", [&](const Tensor& t) { return sum_all(mul(mul(t, other), other)); }, {3, 4});
    run("scale", [&](const Tensor& t) { return sum_all(scale(t, 2.5)); }, {3, 4});
    run("matmul", [&](const Tensor& t) { return sum_all(mul(matmul(t, mat), matmul(t, mat))); },
        {3, 4});
    run("reshape", [&](const Tensor& t) { return sum_all(mul(reshape(t, {12}), reshape(t, {12}))); },
        {3, 4});
    run("transpose",
        [&](const Tensor& t) { return sum_all(mul(transpose(t, {1, 0}), transpose(t, {1, 0}))); },
        {3, 4});
    run("slice", [&](const Tensor& t) { return sum_all(mul(slice(t, 1, 1, 2), slice(t, 1, 0, 2))); },
        {3, 4});
    run("concat",
        [&](const Tensor& t) {
            auto c = concat({t, t}, 0);
            return sum_all(mul(c, c));
        },
        {3, 4});
    run("mean_over_axis",
        [&](const Tensor& t) {
            auto m = mean_over_axis(t, 1);
            return sum_all(mul(m, m));
        },
        {3, 4});
    run("relu", [&](const Tensor& t) { return sum_all(mul(relu(t), other)); }, {3, 4});
    run("sigmoid", [&](const Tensor& t) { return sum_all(mul(sigmoid(t), other)); }, {3, 4});
    run("tanh", [&](const Tensor& t) { return sum_all(mul(tanh(t), other)); }, {3, 4});
    run("softmax",
        [&](const Tensor& t) { return sum_all(mul(softmax_over_axis(t, 1), other)); }, {3, 4});
    run("log_softmax",
        [&](const Tensor& t) { return sum_all(mul(log_softmax_over_axis(t, 1), other)); }, {3, 4});
    // keep samples away from the clip boundaries so the kink filter stays idle
    run("clip", [&](const Tensor& t) { return sum_all(mul(clip(t, -3, 3), other)); }, {3, 4}, -2.5,
        2.5);
    run("mean_all", [&](const Tensor& t) { return mean_all(mul(t, t)); }, {3, 4});
}

TEST_CASE("debug NaN screening") {
    bool prev = debug_checks();
    set_debug_checks(true);
    Tensor inf = Tensor::from({1}, {std::numeric_limits<real>::infinity()});
    Tensor zero = Tensor::zeros({1});
    CHECK_THROWS_AS(mul(inf, zero), ContractError);  // inf*0 -> NaN gets caught
    set_debug_checks(prev);
}

TEST_CASE("detach stops gradient flow") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor d = x.detach();
    CHECK_FALSE(d.requires_grad());
    backward(sum_all(mul(d, d)));
    CHECK(x.grad() == nullptr);
}
