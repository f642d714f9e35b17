#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>

#include "ntl/evaluate.hpp"
#include "ntl/rng.hpp"

using namespace ntl;

namespace {

std::vector<ScoredSample> make_scored(const std::vector<std::pair<double, bool>>& v) {
    std::vector<ScoredSample> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(ScoredSample{std::to_string(i), "c" + std::to_string(i), v[i].first,
                                   v[i].second});
    return out;
}

// Mann-Whitney rank statistic: probability a random positive outscores a
// random negative, ties counted one half.
double rank_auc(const std::vector<ScoredSample>& scored) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (const auto& p : scored) {
        if (!p.truth_ntl) continue;
        for (const auto& n : scored) {
            if (n.truth_ntl) continue;
            ++pairs;
            if (p.score > n.score) wins += 1.0;
            else if (p.score == n.score) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("confusion counts follow the strict-threshold rule") {
    auto all_pos = make_scored({{1.0, true}, {1.0, true}, {1.0, true}});
    auto c = confusion(all_pos, 0.5);
    CHECK(c.tp == 3);
    CHECK(c.fp + c.tn + c.fn == 0);

    // score exactly at the threshold predicts Normal
    auto tie = make_scored({{0.5, true}, {0.5, false}});
    auto tc = confusion(tie, 0.5);
    CHECK(tc.tp == 0);
    CHECK(tc.fn == 1);
    CHECK(tc.tn == 1);

    CHECK(confusion({}, 0.5).total() == 0);
}

TEST_CASE("confusion matches a brute-force recount on random sets") {
    Rng rng(21);
    std::vector<ScoredSample> scored;
    for (int i = 0; i < 1000; ++i)
        scored.push_back(ScoredSample{std::to_string(i), "c", rng.uniform(), rng.bernoulli(0.3)});
    const double thr = 0.37;
    auto c = confusion(scored, thr);
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& s : scored) {
        if (s.score > thr && s.truth_ntl) ++tp;
        if (s.score > thr && !s.truth_ntl) ++fp;
        if (s.score <= thr && s.truth_ntl) ++fn;
        if (s.score <= thr && !s.truth_ntl) ++tn;
    }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.tn == tn);
    CHECK(c.fn == fn);
}

TEST_CASE("precision recall F1 match the closed forms with 0/0 defined as 0") {
    auto m = prf(Counts{5, 1, 0, 2});
    CHECK(m.precision == Catch::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(m.recall == Catch::Approx(5.0 / 7.0).epsilon(1e-12));
    CHECK(m.f1 == Catch::Approx(10.0 / 13.0).epsilon(1e-12));

    auto z = prf(Counts{0, 0, 9, 0});
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f1 == 0.0);

    // precision == recall == x implies F1 == x
    auto e = prf(Counts{6, 2, 0, 2});
    CHECK(e.precision == e.recall);
    CHECK(e.f1 == Catch::Approx(e.precision).epsilon(1e-12));
}

TEST_CASE("roc_auc handles separable, constant, and random scores") {
    auto sep = make_scored({{0.9, true}, {0.8, true}, {0.2, false}, {0.1, false}});
    CHECK(roc_auc(sep).auc == Catch::Approx(1.0).epsilon(1e-12));

    auto flat = make_scored({{0.5, true}, {0.5, false}, {0.5, true}, {0.5, false}});
    CHECK(roc_auc(flat).auc == Catch::Approx(0.5).epsilon(1e-12));

    Rng rng(22);
    std::vector<ScoredSample> rnd;
    for (int i = 0; i < 10000; ++i)
        rnd.push_back(ScoredSample{std::to_string(i), "c", rng.uniform(), rng.bernoulli(0.5)});
    const double auc = roc_auc(rnd).auc;
    CHECK(auc > 0.45);
    CHECK(auc < 0.55);
}

TEST_CASE("roc_auc requires both classes") {
    auto single = make_scored({{0.9, true}, {0.8, true}});
    CHECK_THROWS_AS(roc_auc(single), io_error);
}

TEST_CASE("trapezoidal AUC equals the rank statistic, including ties") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<ScoredSample> scored;
        const int n = 20 + static_cast<int>(rng.uniform_index(200));
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            const double s = std::floor(rng.uniform() * 8.0) / 8.0;
            const bool y = rng.bernoulli(0.4);
            has_pos |= y;
            has_neg |= !y;
            scored.push_back(ScoredSample{std::to_string(i), "c", s, y});
        }
        if (!has_pos || !has_neg) continue;
        CHECK(std::fabs(roc_auc(scored).auc - rank_auc(scored)) < 1e-9);
    }
}

TEST_CASE("AUC is invariant under strictly increasing score transforms") {
    Rng rng(24);
    std::vector<ScoredSample> scored;
    for (int i = 0; i < 500; ++i)
        scored.push_back(ScoredSample{std::to_string(i), "c", rng.uniform(),
                                      rng.bernoulli(0.5)});
    const double base = roc_auc(scored).auc;
    auto transformed = scored;
    for (auto& s : transformed) s.score = 1.0 / (1.0 + std::exp(-6.0 * (s.score - 0.4)));
    CHECK(std::fabs(roc_auc(transformed).auc - base) < 1e-12);
}

TEST_CASE("ROC points run from (0,0) to (1,1) with monotone rates") {
    Rng rng(25);
    std::vector<ScoredSample> scored;
    for (int i = 0; i < 300; ++i)
        scored.push_back(ScoredSample{std::to_string(i), "c",
                                      std::floor(rng.uniform() * 16.0) / 16.0,
                                      rng.bernoulli(0.35)});
    auto roc = roc_auc(scored);
    REQUIRE(roc.points.size() >= 2);
    CHECK(roc.points.front().fpr == 0.0);
    CHECK(roc.points.front().tpr == 0.0);
    CHECK(roc.points.back().fpr == 1.0);
    CHECK(roc.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);      // lowering threshold
        CHECK(roc.points[i].tpr >= roc.points[i - 1].tpr);
        CHECK(roc.points[i].threshold < roc.points[i - 1].threshold);
    }
}

TEST_CASE("per-customer aggregation takes the majority vote with NTL ties") {
    std::vector<ScoredSample> scored = {
        {"w1", "cust1", 0.9, true},  {"w2", "cust1", 0.1, true},  // tie -> NTL
        {"w3", "cust2", 0.9, false}, {"w4", "cust2", 0.8, false}, {"w5", "cust2", 0.1, false},
        {"w6", "cust3", 0.2, false},
    };
    auto c = per_customer_confusion(scored, 0.5);
    CHECK(c.tp == 1);  // cust1
    CHECK(c.fp == 1);  // cust2 majority predicted ntl
    CHECK(c.tn == 1);  // cust3
    CHECK(c.fn == 0);
}

TEST_CASE("compute_metrics fills per-class metrics consistently") {
    auto scored = make_scored({{0.9, true}, {0.6, true}, {0.4, true}, {0.7, false}, {0.2, false}});
    auto r = compute_metrics(scored, 0.5);
    CHECK(r.counts.tp == 2);
    CHECK(r.counts.fp == 1);
    CHECK(r.counts.fn == 1);
    CHECK(r.counts.tn == 1);
    CHECK(r.ntl.precision == Catch::Approx(2.0 / 3.0));
    CHECK(r.normal.recall == Catch::Approx(0.5));
    // F1 is the harmonic mean of its own precision/recall
    CHECK(r.ntl.f1 ==
          Catch::Approx(2 * r.ntl.precision * r.ntl.recall / (r.ntl.precision + r.ntl.recall)));
}
