#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "crnl/metrics.hpp"

using namespace crnl;

namespace {
LabelSeq seq(std::vector<int> v) { return LabelSeq{std::move(v)}; }
}  // namespace

TEST_CASE("clp: positionwise hits over ground-truth characters") {
    CHECK(clp({seq({1, 2, 3})}, {seq({1, 2, 3})}) == doctest::Approx(1.0));
    CHECK(clp({seq({1, 2, 4})}, {seq({1, 2, 3})}) == doctest::Approx(2.0 / 3));
    // shorter prediction: the missing character counts as a miss
    CHECK(clp({seq({1, 2})}, {seq({1, 2, 3})}) == doctest::Approx(2.0 / 3));
    // longer prediction: extra characters do not add hits or denominator
    CHECK(clp({seq({1, 2, 3, 4})}, {seq({1, 2, 3})}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(clp({seq({1})}, {}), ContractError);
}

TEST_CASE("ilp: exact sequence equality per entry") {
    CHECK(ilp({seq({1}), seq({2})}, {seq({1}), seq({2})}) == doctest::Approx(1.0));
    CHECK(ilp({seq({1}), seq({3})}, {seq({1}), seq({2})}) == doctest::Approx(0.5));
    CHECK(ilp({seq({})}, {seq({4, 5})}) == doctest::Approx(0.0));
}

TEST_CASE("metrics are permutation invariant and agree on exactness") {
    std::vector<LabelSeq> preds{seq({1, 2}), seq({3}), seq({4, 5, 6})};
    std::vector<LabelSeq> gts{seq({1, 2}), seq({9}), seq({4, 5, 1})};
    double c0 = clp(preds, gts), i0 = ilp(preds, gts);
    std::vector<LabelSeq> p2{preds[2], preds[0], preds[1]};
    std::vector<LabelSeq> g2{gts[2], gts[0], gts[1]};
    CHECK(clp(p2, g2) == doctest::Approx(c0));
    CHECK(ilp(p2, g2) == doctest::Approx(i0));

    // clp == ilp == 1 iff every prediction is exact
    std::vector<LabelSeq> exact{seq({1}), seq({2, 3})};
    CHECK(clp(exact, exact) == doctest::Approx(1.0));
    CHECK(ilp(exact, exact) == doctest::Approx(1.0));
    CHECK(clp(preds, gts) < 1.0);
    CHECK(ilp(preds, gts) < 1.0);
}

TEST_CASE("ten-example fixture with hand-computed values") {
    std::vector<LabelSeq> gts = {
        seq({1, 2, 3}),     // exact              3 hits / 3
        seq({4, 5}),        // exact              2 / 2
        seq({1, 1, 1}),     // one wrong          2 / 3
        seq({7, 8, 9, 2}),  // pred short (2)     2 / 4
        seq({3, 3}),        // pred long, prefix  2 / 2, not exact
        seq({6}),           // wrong              0 / 1
        seq({2, 4, 6}),     // empty pred         0 / 3
        seq({5, 5, 5}),     // exact              3 / 3
        seq({9, 1}),        // swapped            0 / 2
        seq({8}),           // exact              1 / 1
    };
    std::vector<LabelSeq> preds = {
        seq({1, 2, 3}), seq({4, 5}),    seq({1, 9, 1}), seq({7, 8}),  seq({3, 3, 7}),
        seq({2}),       seq({}),        seq({5, 5, 5}), seq({1, 9}),  seq({8}),
    };
    // hits = 3+2+2+2+2+0+0+3+0+1 = 15; gt chars = 3+2+3+4+2+1+3+3+2+1 = 24
    CHECK(clp(preds, gts) == doctest::Approx(15.0 / 24));
    // exact: entries 0, 1, 7, 9
    CHECK(ilp(preds, gts) == doctest::Approx(4.0 / 10));
}

TEST_CASE("levenshtein and the auxiliary edit rate") {
    CHECK(levenshtein(seq({1, 2, 3}), seq({1, 2, 3})) == 0);
    CHECK(levenshtein(seq({1, 2, 3}), seq({1, 3})) == 1);
    CHECK(levenshtein(seq({}), seq({1, 2})) == 2);
    CHECK(levenshtein(seq({1, 2}), seq({2, 1})) == 2);
    CHECK(edit_rate({seq({1, 2, 3})}, {seq({1, 2, 3})}) == doctest::Approx(0.0));
    CHECK(edit_rate({seq({1, 3})}, {seq({1, 2, 3})}) == doctest::Approx(1.0 / 3));
}

TEST_CASE("eval csv layout") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "crnl_eval_test.csv";
    std::vector<EvalRecord> recs{{0, 0, seq({1, 2}), seq({1, 2}), 2, true},
                                 {1, 3, seq({4}), seq({}), 0, false}};
    write_eval_csv(path.string(), recs);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "example_id,row,gt,pred,char_hits,exact");
    std::getline(f, line);
    CHECK(line == "0,0,1 2,1 2,2,1");
    std::getline(f, line);
    CHECK(line == "1,3,4,,0,0");
    fs::remove(path);
}
