#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "adaptg/engine.hpp"
#include "adaptg/rng.hpp"
#include "adaptg/simlab.hpp"
#include "adaptg/workmodel.hpp"

using namespace adaptg;

namespace {

PreparedData from_pvalues(const std::vector<double>& p, std::vector<double> x = {}) {
    std::vector<HypothesisRecord> recs;
    for (std::size_t i = 0; i < p.size(); ++i) {
        HypothesisRecord r;
        r.id = std::to_string(i);
        if (!x.empty()) r.x = {x[i]};
        r.p = p[i];
        recs.push_back(std::move(r));
    }
    return prepare_data(recs, NullType::one_sided_right());
}

}  // namespace

TEST_CASE("fdp_hat formula and the R = 0 convention") {
    CHECK(fdp_hat(0, 1, 20.0) == doctest::Approx(0.05));
    CHECK(fdp_hat(3, 10, 2.0) == doctest::Approx(0.2));
    CHECK(fdp_hat(1, 21, 1.0) == doctest::Approx(2.0 / 21.0));
    CHECK(std::isinf(fdp_hat(5, 0, 2.0)));
    CHECK_THROWS_AS(fdp_hat(-1, 2, 1.0), std::invalid_argument);
}

TEST_CASE("reveal_by_score: argmax with lowest-index ties") {
    const std::vector<std::pair<int, double>> a = {{3, 0.9}, {7, 0.2}};
    CHECK(reveal_by_score(a) == 3);
    const std::vector<std::pair<int, double>> b = {{7, 0.5}, {3, 0.5}};
    CHECK(reveal_by_score(b) == 3);
    const std::vector<std::pair<int, double>> c = {{5, 0.75}, {9, 0.75}, {2, 0.75}};
    CHECK(reveal_by_score(c) == 2);
}

TEST_CASE("nothing maskable means no rejections") {
    const PreparedData data = from_pvalues(std::vector<double>(10, 0.95));
    const MaskingParams params = default_params(10, 0.05);  // nu = 0.9
    IndexOrderPolicy policy;
    const RunResult res = run(data, params, 0.05, policy);
    CHECK(res.no_rejections());
    CHECK(res.rejected.empty());
    REQUIRE_FALSE(res.trace.empty());
    CHECK(res.trace.front().masked == 0);
}

TEST_CASE("immediate stop when the estimate starts below alpha") {
    // one red point, no blue points: FDP-hat at t=0 is 1/(zeta R) <= alpha
    std::vector<double> p = {1e-6};
    const PreparedData data = from_pvalues(p);
    const MaskingParams params = default_params(1, 0.05);  // zeta = 20
    IndexOrderPolicy policy;
    const RunResult res = run(data, params, 0.05, policy);
    REQUIRE(res.stop_step.has_value());
    CHECK(*res.stop_step == 0);
    CHECK(res.rejected == std::vector<int>{0});
}

TEST_CASE("one strong signal among uniform blues gets rejected (zeta = 20)") {
    // 99 p-values at 0.5 (blue under the small-n defaults) and one at 1e-9.
    std::vector<double> p(100, 0.5);
    p[57] = 1e-9;
    const PreparedData data = from_pvalues(p);
    const MaskingParams params = default_params(100, 0.05);  // zeta = 20, R_min = 1
    // score the blues high so they are revealed first
    std::vector<std::pair<int, double>> scores;
    for (int i = 0; i < 100; ++i) scores.emplace_back(i, i == 57 ? 0.0 : 1.0);
    FixedOrderPolicy policy(scores);
    const RunResult res = run(data, params, 0.05, policy);
    REQUIRE_FALSE(res.no_rejections());
    CHECK(res.rejected == std::vector<int>{57});

    // the symmetric configuration cannot reach R_min = 20 with one signal
    FixedOrderPolicy policy2(scores);
    const RunResult sym = run(data, MaskingParams::symmetric(), 0.05, policy2);
    CHECK(sym.no_rejections());
}

TEST_CASE("symmetric parameters reproduce the (1+A)/R estimator") {
    std::vector<double> p = {0.01, 0.02, 0.6, 0.7, 0.8, 0.97};
    const PreparedData data = from_pvalues(p);
    IndexOrderPolicy policy;
    const RunResult res = run(data, MaskingParams::symmetric(), 0.9, policy);
    REQUIRE_FALSE(res.trace.empty());
    const TraceRow& t0 = res.trace.front();
    // p <= 0.5 are red (3 of them incl. 0.97's complement? no: 0.97 -> m=0.03, blue)
    // reds: 0.01, 0.02; blues: 0.6, 0.7, 0.8, 0.97
    CHECK(t0.a_count == 4);
    CHECK(t0.r_count == 2);
    CHECK(t0.fdp == doctest::Approx((1.0 + 4.0) / (1.0 * 2.0)));
}

TEST_CASE("masking set shrinks strictly and the stop rule is sound") {
    Rng rng(2027);
    std::vector<double> p;
    for (int i = 0; i < 400; ++i)
        p.push_back(rng.bernoulli(0.15) ? rng.uniform(0.0, 1e-4) : rng.uniform01());
    const PreparedData data = from_pvalues(p);
    const MaskingParams params = default_params(p.size(), 0.1);
    IndexOrderPolicy policy;
    const double alpha = 0.1;
    const RunResult res = run(data, params, alpha, policy);
    REQUIRE(res.trace.size() >= 2);
    for (std::size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i].masked < res.trace[i - 1].masked);
    if (res.stop_step) {
        const TraceRow& last = res.trace.back();
        CHECK(last.fdp <= alpha);
        for (std::size_t i = 0; i + 1 < res.trace.size(); ++i) CHECK(res.trace[i].fdp > alpha);
        const double zeta = params.zeta();
        CHECK(static_cast<long>(res.rejected.size()) >= r_min(zeta, alpha));
    }
}

TEST_CASE("policies never see masked bits or p-values") {
    struct SpyPolicy : RevealPolicy {
        bool barrier_ok = true;
        std::vector<int> choose(const PolicyView& view) override {
            for (int i : view.masked_indices()) {
                if (view.revealed_bit(i).has_value()) barrier_ok = false;
                if (view.revealed_p(i).has_value()) barrier_ok = false;
            }
            // revealed hypotheses expose their bit and reconstructed p
            for (std::size_t i = 0; i < view.size(); ++i) {
                const int ii = static_cast<int>(i);
                if (!view.is_masked(ii) && view.is_maskable(ii)) {
                    if (!view.revealed_bit(ii).has_value()) barrier_ok = false;
                    if (!view.revealed_p(ii).has_value()) barrier_ok = false;
                }
            }
            auto masked = view.masked_indices();
            return {masked.begin(), masked.begin() + 1};
        }
    };
    Rng rng(5);
    std::vector<double> p;
    for (int i = 0; i < 50; ++i) p.push_back(rng.uniform01());
    const PreparedData data = from_pvalues(p);
    SpyPolicy spy;
    run(data, default_params(50, 0.05), 1e-9, spy);  // alpha tiny: full unmasking sweep
    CHECK(spy.barrier_ok);
}

TEST_CASE("revealed p-values re-mask consistently") {
    Rng rng(6);
    std::vector<double> p;
    for (int i = 0; i < 30; ++i) p.push_back(rng.uniform01());
    const PreparedData data = from_pvalues(p);
    const MaskingParams params = default_params(30, 0.05);

    struct CheckPolicy : RevealPolicy {
        const std::vector<double>* truth;
        const MaskingParams* params;
        bool consistent = true;
        std::vector<int> choose(const PolicyView& view) override {
            for (std::size_t i = 0; i < view.size(); ++i) {
                const int ii = static_cast<int>(i);
                if (view.is_masked(ii) || !view.is_maskable(ii)) continue;
                const auto rp = view.revealed_p(ii);
                if (!rp || std::fabs(*rp - clamp_p((*truth)[i])) > 1e-9) consistent = false;
            }
            auto masked = view.masked_indices();
            return {masked.begin(), masked.begin() + 1};
        }
    };
    CheckPolicy policy;
    policy.truth = &p;
    policy.params = &params;
    run(data, params, 1e-9, policy);
    CHECK(policy.consistent);
}

TEST_CASE("protocol violations abort the run") {
    std::vector<double> p(20, 0.5);
    const PreparedData data = from_pvalues(p);
    const MaskingParams params = default_params(20, 0.05);

    struct EmptyPolicy : RevealPolicy {
        std::vector<int> choose(const PolicyView&) override { return {}; }
    } empty;
    CHECK_THROWS_WITH_AS(run(data, params, 0.001, empty),
                         "reveal policy returned an empty batch", std::runtime_error);

    struct OutOfSetPolicy : RevealPolicy {
        std::vector<int> choose(const PolicyView&) override { return {9999}; }
    } oos;
    CHECK_THROWS_AS(run(data, params, 0.001, oos), std::runtime_error);

    struct RepeatPolicy : RevealPolicy {
        int last = -1;
        std::vector<int> choose(const PolicyView& view) override {
            if (last < 0) last = view.masked_indices()[0];
            return {last, last};  // duplicate within one batch
        }
    } rep;
    CHECK_THROWS_AS(run(data, params, 0.001, rep), std::runtime_error);

    struct OversizePolicy : RevealPolicy {
        std::vector<int> choose(const PolicyView& view) override {
            auto masked = view.masked_indices();
            std::vector<int> batch(masked.begin(), masked.end());
            return batch;  // exceeds the cap when |M| > cap
        }
    } oversize;
    RunOptions opts;
    opts.batch_cap = 2;
    CHECK_THROWS_AS(run(data, params, 0.001, oversize, opts), std::runtime_error);
}

TEST_CASE("default batch cap is max(1, |M0|/50)") {
    std::vector<double> p(200, 0.5);  // all blue under defaults
    const PreparedData data = from_pvalues(p);
    struct CapPolicy : RevealPolicy {
        std::size_t seen_cap = 0;
        std::vector<int> choose(const PolicyView& view) override {
            seen_cap = view.batch_cap();
            auto masked = view.masked_indices();
            return {masked.begin(), masked.begin() + 1};
        }
    } policy;
    run(data, default_params(200, 0.05), 1e-9, policy);
    CHECK(policy.seen_cap == 4);  // |M0| = 200
}

TEST_CASE("oracle policy: null-only model gives q = zeta/(1+zeta)") {
    std::vector<double> p = {0.5, 0.7, 0.01};
    const PreparedData data = from_pvalues(p);
    const MaskingParams params(0.2, 0.3, 0.9);  // zeta = 3
    MaskState st = make_mask_state(data, params);
    std::vector<int> masked;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (st.in_masked_set[i]) masked.push_back(static_cast<int>(i));
    const PolicyView view = RunDriver::make_view(data, st, params, masked, 1);

    auto flat = [](std::span<const double>, double z) { return log_norm_pdf(z); };
    OracleRevealPolicy policy(flat);
    for (int i : masked)
        CHECK(policy.oracle_q(view, i) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("oracle policy: strong logistic signal gets a low blue probability") {
    std::vector<HypothesisRecord> recs(1);
    recs[0].id = "0";
    recs[0].x = {3.0};
    recs[0].z = 3.1;  // p ~ 1e-3: a likely signal at x = 3
    recs[0].se = 1.0;
    const PreparedData data = prepare_data(recs, NullType::one_sided_right());
    const MaskingParams params = default_params(1000, 0.05);
    MaskState st = make_mask_state(data, params);
    REQUIRE(st.in_masked_set[0]);
    std::vector<int> masked = {0};
    const PolicyView view = RunDriver::make_view(data, st, params, masked, 1);
    OracleRevealPolicy policy{LogisticTrueDensity(Scenario::LogisticOneSided)};
    CHECK(policy.oracle_q(view, 0) < 0.2);
}

TEST_CASE("run validates inputs") {
    std::vector<double> p = {0.2};
    const PreparedData data = from_pvalues(p);
    IndexOrderPolicy policy;
    CHECK_THROWS_AS(run(data, default_params(1, 0.05), 1.5, policy), std::invalid_argument);
}
