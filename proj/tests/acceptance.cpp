// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Exit status is the number of failures.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "adaptg/adaptg.hpp"

using namespace adaptg;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct PairedT {
    double mean = 0.0, se = 0.0, t = 0.0;
    std::size_t n = 0;
};

PairedT paired_t(const std::vector<double>& diffs) {
    PairedT out;
    out.n = diffs.size();
    out.mean = mean_of(diffs);
    out.se = std::sqrt(sample_var(diffs) / static_cast<double>(diffs.size()));
    out.t = out.se > 0.0 ? out.mean / out.se : (out.mean > 0.0 ? 1e9 : 0.0);
    return out;
}

// one-sided 1% critical value of Student t with 49 degrees of freedom
constexpr double kTCrit1pcDf49 = 2.405;

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void criterion_1_table_defaults() {
    struct Row { std::size_t n; double zeta, alpha_m; long rmin; };
    const Row rows[] = {{300, 20.0, 0.043, 1}, {500, 12.0, 0.069, 2},
                        {1000, 6.0, 0.13, 4}, {3000, 2.0, 0.3, 10}};
    bool ok = true;
    std::string detail;
    for (const Row& row : rows) {
        const MaskingParams p = default_params(row.n, 0.05);
        const double scale = row.alpha_m >= 0.1 ? (row.alpha_m >= 0.3 ? 10.0 : 100.0) : 1000.0;
        const bool row_ok = std::fabs(p.zeta() - row.zeta) < 1e-9 && p.nu == 0.9 &&
                            p.alpha_m == p.lambda &&
                            std::fabs(std::round(p.alpha_m * scale) / scale - row.alpha_m) < 1e-12 &&
                            r_min(p.zeta(), 0.05) == row.rmin;
        if (!row_ok) {
            ok = false;
            detail += "n=" + std::to_string(row.n) + " mismatch; ";
        }
    }
    if (ok) detail = "zeta {20,12,6,2}, alpha_m {0.043,0.069,0.13,0.3}, nu 0.9, R_min {1,2,4,10}";
    report(1, ok, "size-based masking defaults reproduce all four table rows", detail);
}

struct ScenarioRuns {
    Scenario scenario;
    EvalReport report;
};

std::vector<ScenarioRuns> run_fdr_power_battery() {
    std::vector<ScenarioRuns> out;
    for (Scenario sc : {Scenario::LogisticOneSided, Scenario::LogisticPoint,
                        Scenario::LogisticInterval}) {
        LogisticSimConfig cfg;
        cfg.n = 1000;
        cfg.replications = 50;
        cfg.alpha_grid = {0.05, 0.1, 0.2};
        cfg.scenario = sc;
        cfg.seed = 20260808;
        const std::vector<Method> methods = {make_bh_method(), make_storey_method(),
                                             make_adaptg_method()};
        out.push_back({sc, evaluate(methods, cfg)});
    }
    return out;
}

void criterion_2_fdr_control(const std::vector<ScenarioRuns>& runs, double seconds) {
    bool ok = true;
    std::string detail;
    for (const auto& sr : runs) {
        for (double alpha : {0.05, 0.1, 0.2}) {
            const EvalSummary& s = sr.report.summary("adaptg", alpha);
            const double bound = alpha + 3.0 * s.fdr_se;
            const bool cell_ok = s.n_ok == 50 && s.fdr_mean <= bound + 1e-12;
            detail += scenario_name(sr.scenario) + "@" + fmt(alpha) + ":" + fmt(s.fdr_mean) +
                      (cell_ok ? " " : "!(>" + fmt(bound) + ") ");
            ok = ok && cell_ok;
        }
    }
    detail += "| " + fmt(seconds) + "s";
    report(2, ok, "empirical FDR <= alpha + 3 SE for the full pipeline, all null types", detail);
}

void criterion_3_power_direction(const std::vector<ScenarioRuns>& runs) {
    bool ok = true;
    std::string detail;
    for (const auto& sr : runs) {
        for (const std::string baseline : {"bh", "storey"}) {
            const PairedT t = paired_t(sr.report.paired_diff("adaptg", baseline, 0.1));
            const bool cell_ok = t.n == 50 && t.mean > 0.0 && t.t > kTCrit1pcDf49;
            detail += scenario_name(sr.scenario) + ">" + baseline + ":t=" + fmt(t.t) +
                      (cell_ok ? " " : "! ");
            ok = ok && cell_ok;
        }
    }
    report(3, ok, "TPR strictly exceeds BH and Storey-BH at alpha 0.1 (paired, 1%)", detail);
}

void criterion_4_small_rejections() {
    const auto t0 = std::chrono::steady_clock::now();
    const int runs = 200;
    std::atomic<int> hits_default{0}, hits_symmetric{0};
    parallel_for(static_cast<std::size_t>(runs), [&](std::size_t seed) {
        Rng rng = Rng::stream(4040, seed);
        SimData d;
        d.null = NullType::one_sided_right();
        d.records.resize(100);
        d.is_null.assign(100, 1);
        d.theta.assign(100, 0.0);
        d.gamma.assign(100, 0);
        for (int i = 0; i < 100; ++i) {
            d.records[static_cast<std::size_t>(i)].id = std::to_string(i);
            d.records[static_cast<std::size_t>(i)].p = (i == 0) ? 1e-9 : rng.uniform01();
        }
        d.is_null[0] = 0;
        AdaptgOptions defaults;  // zeta = 20 for n = 100 at alpha = 0.05
        if (!run_adaptg(d, 0.05, seed, defaults).empty()) ++hits_default;
        AdaptgOptions sym;
        sym.masking = MaskingParams::symmetric();  // R_min = 20: unattainable
        if (!run_adaptg(d, 0.05, seed, sym).empty()) ++hits_symmetric;
    });
    const bool ok = hits_default.load() >= 180 && hits_symmetric.load() == 0;
    report(4, ok, "one strong signal among 100 is rejectable only with the stretched mask",
           "default " + std::to_string(hits_default.load()) + "/200 (need >=180), symmetric " +
               std::to_string(hits_symmetric.load()) + "/200 (need 0) | " + fmt(elapsed_s(t0)) +
               "s");
}

void criterion_5_spike_robustness() {
    const auto t0 = std::chrono::steady_clock::now();
    LogisticSimConfig cfg;
    cfg.n = 1000;
    cfg.replications = 50;
    cfg.alpha_grid = {0.1};
    cfg.scenario = Scenario::LogisticInterval;
    cfg.seed = 505;
    AdaptgOptions sym;
    sym.masking = MaskingParams::symmetric();
    const EvalReport rep = evaluate(
        {make_adaptg_method("adaptg", {}), make_adaptg_method("adaptg-symmetric", sym)}, cfg);
    const PairedT t = paired_t(rep.paired_diff("adaptg", "adaptg-symmetric", 0.1));
    const bool ok = t.n == 50 && t.mean >= 0.0 && t.t > kTCrit1pcDf49;
    report(5, ok, "nu = 0.9 dominates the symmetric mask under the interval-null spike at 1",
           "tpr " + fmt(rep.summary("adaptg", 0.1).tpr_mean) + " vs " +
               fmt(rep.summary("adaptg-symmetric", 0.1).tpr_mean) + ", t=" + fmt(t.t) + " | " +
               fmt(elapsed_s(t0)) + "s");
}

void criterion_6_conservatism() {
    const auto t0 = std::chrono::steady_clock::now();
    ConservatismSpec spec;
    spec.n = 1000;
    spec.params = default_params(1000, 0.05);  // zeta = 6
    spec.replications = 10000;
    spec.seed = 606;
    const ConservatismReport rep = conservatism_check(spec);
    const double target = 1.0 / rep.zeta;
    const bool ok = std::fabs(rep.mean_diff - target) <= 3.0 * rep.se;
    report(6, ok, "E[(A+1)/zeta] - E[V] = 1/zeta on uniform nulls at a fixed threshold",
           "mean " + fmt(rep.mean_diff) + " vs " + fmt(target) + " +- " + fmt(3.0 * rep.se) +
               " | " + fmt(elapsed_s(t0)) + "s");
}

void criterion_7_card_game() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(707);
    int checked = 0;
    std::string fail_detail;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.index(4));  // n in {2..5}
        CardGame game;
        for (int i = 0; i < n; ++i)
            game.q.push_back(Rational(static_cast<long long>(rng.index(65)), 64));
        long long thr = static_cast<long long>(rng.index(static_cast<std::size_t>(n)));
        for (int t = 0; t < n; ++t) {
            game.thresholds.push_back(thr);
            if (thr > 0 && rng.bernoulli(0.5)) --thr;  // valid non-increasing sequence
        }
        const CardGameVerdict v = card_game_bruteforce(game);
        if (!v.descending_optimal) {
            fail_detail = "game " + std::to_string(trial) + ": " + v.detail;
            break;
        }
        ++checked;
    }
    report(7, checked == 100, "descending-q fixed reveal order is optimal in exact arithmetic",
           (checked == 100 ? "100/100 games, n in {2..5}" : fail_detail) + " | " +
               fmt(elapsed_s(t0)) + "s");
}

void criterion_8_em_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok_a = true, ok_b = true, ok_c = true, ok_d = true;
    std::string detail;

    // (a) penalized observed-data objective non-decreasing on a fit battery
    {
        for (Scenario sc : {Scenario::LogisticOneSided, Scenario::LogisticPoint,
                            Scenario::LogisticInterval}) {
            Rng rng(808);
            const SimData sim = gen_logistic(800, sc, rng);
            const PreparedData prep = prepare_data(sim.records, sim.null);
            const MaskingParams params = default_params(800, 0.05, sim.null);
            const MaskState st = make_mask_state(prep, params);
            std::vector<int> masked;
            for (std::size_t i = 0; i < prep.size(); ++i)
                if (st.in_masked_set[i]) masked.push_back(static_cast<int>(i));
            const PolicyView view = RunDriver::make_view(prep, st, params, masked, 1);
            const AnalystData data = AnalystData::from_view(view);
            const CandidateTable table = CandidateTable::build(data);
            for (ClassifierKind kind :
                 {ClassifierKind::Intercept, ClassifierKind::Logit, ClassifierKind::Net}) {
                FeatureMap fm = FeatureMap::natural_cubic_spline(3);
                fm.fit(data.covariates);
                ClassifierSpec spec;
                spec.kind = kind;
                spec.net.max_epochs = 80;
                const Matrix features = features_for(fm, data.covariates, kind);
                EmConfig cfg;
                cfg.seed = 11;
                cfg.symmetric = sim.null.is_interval();
                const FitResult fit = fit_em(table, features, spec, cfg, std::nullopt, 3);
                for (std::size_t i = 1; i < fit.loglik_path.size(); ++i)
                    if (fit.loglik_path[i] < fit.loglik_path[i - 1] - 1e-8) ok_a = false;
            }
        }
        detail += std::string("ascent:") + (ok_a ? "ok" : "VIOLATED") + " ";
    }

    // (b) E-step weights against the frozen independent-arithmetic oracle
    {
        const MaskingParams params(0.2, 0.3, 0.9);
        AnalystData d;
        d.covariates = Matrix(1, 0);
        d.m = {0.01};
        d.sigma = {1.0};
        d.maskable = {1};
        d.revealed_b = {-1};
        d.sign = {1};
        d.delta = {0.0};
        d.model_null = NullType::one_sided_right();
        d.mask = params;
        const CandidateTable table = CandidateTable::build(d);
        std::vector<double> pi = {0.5, 0.5};
        GmmParams gm;
        gm.K = 2;
        gm.mu = {0.0, 2.0};
        gm.tau2 = {0.0, 1.0};
        gm.classifier = std::make_shared<InterceptOnlyModel>(pi);
        const WeightTable wt = e_step(table, Matrix(1, 0), gm);
        // expect[k][b], candidates ordered b = 0 then b = 1
        const double expect[2][2] = {{0.06824232239685135, 0.20472696719055405},
                                     {0.7033205954531989, 0.023710114959395675}};
        for (int k = 0; k < 2; ++k)
            for (int b = 0; b < 2; ++b)
                if (std::fabs(wt.at(table, 0, static_cast<std::size_t>(b), k) - expect[k][b]) >
                    1e-8)
                    ok_b = false;
        detail += std::string("e-step:") + (ok_b ? "ok" : "MISMATCH") + " ";
    }

    // (c) closed-form versus bounded-optimizer M-step under equal sigma
    {
        Rng rng(812);
        std::vector<detail::PseudoObs> obs;
        for (int i = 0; i < 300; ++i)
            obs.push_back({rng.normal(0.8, 1.7), rng.uniform(0.05, 1.0), 1.0});
        const auto cf = detail::component_closed_form(obs, 1e-8);
        const auto qn = detail::component_optimize(obs, 0.0, 1.0, 1e-8);
        if (std::fabs(cf.first - qn.first) > 1e-6 ||
            std::fabs(cf.second - qn.second) > 1e-6 * std::max(1.0, cf.second))
            ok_c = false;
        detail += std::string("m-step:") + (ok_c ? "ok" : "MISMATCH") + " ";
    }

    // (d) shallow-net gradient against central finite differences
    {
        Rng rng(813);
        const std::size_t n = 7, dd = 3, K = 3, h = 2;
        Matrix xs(n, dd), w(n, K);
        for (std::size_t i = 0; i < n; ++i) {
            double tot = 0.0;
            for (std::size_t j = 0; j < dd; ++j) xs(i, j) = rng.normal();
            for (std::size_t k = 0; k < K; ++k) { w(i, k) = rng.uniform(0.05, 1.0); tot += w(i, k); }
            for (std::size_t k = 0; k < K; ++k) w(i, k) /= tot;
        }
        ShallowNet::Params p;
        p.d = dd; p.h = h; p.K = K;
        p.w1.resize(h * dd);
        p.w2.resize((K - 1) * h);
        for (auto& v : p.w1) v = rng.normal(0.0, 0.6);
        for (auto& v : p.w2) v = rng.normal(0.0, 0.6);
        std::vector<double> grad;
        ShallowNet::gradient(xs, w, p, 1e-4, grad);
        const double eps = 1e-5;
        std::size_t t = 0;
        auto probe = [&](double& ref) {
            const double orig = ref;
            ref = orig + eps;
            const double up = ShallowNet::objective(xs, w, p, 1e-4);
            ref = orig - eps;
            const double dn = ShallowNet::objective(xs, w, p, 1e-4);
            ref = orig;
            const double fd = (up - dn) / (2 * eps);
            const double scale = std::max({std::fabs(fd), std::fabs(grad[t]), 1e-8});
            if (std::fabs(grad[t] - fd) / scale > 1e-5) ok_d = false;
            ++t;
        };
        for (auto& v : p.w1) probe(v);
        for (auto& v : p.w2) probe(v);
        detail += std::string("gradient:") + (ok_d ? "ok" : "MISMATCH");
    }

    report(8, ok_a && ok_b && ok_c && ok_d, "EM correctness: ascent, E-step, M-step, gradients",
           detail + " | " + fmt(elapsed_s(t0)) + "s");
}

void criterion_9_roundtrip_property() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(909);
    long failures = 0;
    const long trials = 100000;
    for (long trial = 0; trial < trials; ++trial) {
        const double am = rng.uniform(0.02, 0.45);
        const double lam = rng.uniform(am, 0.7);
        const double nu = rng.uniform(lam + 0.01, 1.0);
        MaskingParams params;
        try {
            params = MaskingParams(am, lam, nu,
                                   rng.bernoulli(0.5) ? MaskShape::Tent : MaskShape::Comb);
        } catch (const std::invalid_argument&) {
            --trial;
            continue;
        }
        NullType null = NullType::one_sided_right();
        const int which = static_cast<int>(rng.index(4));
        if (which == 1) null = NullType::one_sided_left();
        if (which == 2) null = NullType::point();
        if (which == 3) null = NullType::interval(rng.uniform(0.0, 2.0));
        const double sigma = rng.uniform(0.5, 2.0);
        const double p = rng.uniform01();

        const MaskedValue mv = mask(p, params);
        const auto pcands = unmask_candidates(mv, params);
        bool found = false;
        for (const auto& c : pcands) {
            if (std::fabs(mask(std::clamp(c.p, 0.0, 1.0), params).m - mv.m) > 1e-12) ++failures;
            if (std::fabs(c.p - p) < 1e-12) found = true;
        }
        if (!found) ++failures;

        std::optional<int> side;
        if (null.is_point()) side = rng.bernoulli(0.5) ? 1 : -1;
        const auto zcands = z_candidates(mv, sigma, null, side, params);
        if (null.is_interval() && mv.is_maskable && zcands.size() != 4) ++failures;
        for (const auto& c : zcands) {
            double expect = 0.0;
            for (const auto& pc : pcands)
                if (pc.b == c.b) expect = clamp_p(pc.p);
            if (std::fabs(p_value(c.z, sigma, null) - expect) > 1e-10) ++failures;
        }
    }
    report(9, failures == 0, "mask/unmask and z-candidate inversion over 1e5 random tuples",
           std::to_string(failures) + " failures | " + fmt(elapsed_s(t0)) + "s");
}

void criterion_10_worked_example() {
    const MaskingParams params(0.2, 0.3, 0.9);
    const MaskedValue mv = mask(0.87, params);
    const auto cands = unmask_candidates({0.01, true}, params);
    const bool ok = mv.is_maskable && std::fabs(mv.m - 0.01) < 1e-12 && cands.size() == 2 &&
                    cands[0].b == 0 && std::fabs(cands[0].p - 0.01) < 1e-12 && cands[1].b == 1 &&
                    std::fabs(cands[1].p - 0.87) < 1e-12;
    report(10, ok, "worked example: m = 0.01 <-> {0.01, 0.87} under (0.2, 0.3, 0.9)",
           "g(0.87) = " + fmt(mv.m) + ", candidates {" + fmt(cands[0].p) + ", " +
               fmt(cands[1].p) + "}");
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    std::printf("acceptance suite (n = 1000, 50 replications where applicable)\n");

    criterion_1_table_defaults();

    const auto t_battery = std::chrono::steady_clock::now();
    const std::vector<ScenarioRuns> battery = run_fdr_power_battery();
    const double battery_s = elapsed_s(t_battery);
    criterion_2_fdr_control(battery, battery_s);
    criterion_3_power_direction(battery);

    criterion_4_small_rejections();
    criterion_5_spike_robustness();
    criterion_6_conservatism();
    criterion_7_card_game();
    criterion_8_em_correctness();
    criterion_9_roundtrip_property();
    criterion_10_worked_example();

    std::printf("%s: %d criterion(s) failed, total %.1fs\n", g_failures == 0 ? "OK" : "FAILED",
                g_failures, elapsed_s(t0));
    return g_failures;
}
