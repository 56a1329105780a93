#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "adaptg/baselines.hpp"
#include "adaptg/engine.hpp"
#include "adaptg/masking.hpp"
#include "adaptg/rational.hpp"
#include "adaptg/records.hpp"
#include "adaptg/rng.hpp"
#include "adaptg/workmodel.hpp"

namespace adaptg {

// ---------------------------------------------------------------------------
// Replication-parallel helper
// ---------------------------------------------------------------------------

inline unsigned max_threads() {
    if (const char* env = std::getenv("ADAPTG_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

/// Runs f(i) for i in [0, n). Results must be written by index so the outcome
/// is independent of scheduling.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    const unsigned nt = std::min<std::size_t>(max_threads(), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    for (unsigned t = 0; t < nt; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) break;
                try {
                    f(i);
                } catch (...) {
                    failed.store(true);
                    break;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failed.load()) throw std::runtime_error("parallel_for: worker failed");
}

// ---------------------------------------------------------------------------
// Generative scenarios
// ---------------------------------------------------------------------------

enum class Scenario { LogisticOneSided, LogisticPoint, LogisticInterval, SpikeAtOne };

inline std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::LogisticOneSided: return "logistic-onesided";
        case Scenario::LogisticPoint: return "logistic-point";
        case Scenario::LogisticInterval: return "logistic-interval";
        case Scenario::SpikeAtOne: return "spike-at-one";
    }
    return "?";
}

inline std::optional<Scenario> scenario_from_name(const std::string& name) {
    for (Scenario s : {Scenario::LogisticOneSided, Scenario::LogisticPoint,
                       Scenario::LogisticInterval, Scenario::SpikeAtOne})
        if (scenario_name(s) == name) return s;
    return std::nullopt;
}

inline NullType scenario_null(Scenario s) {
    switch (s) {
        case Scenario::LogisticOneSided: return NullType::one_sided_right();
        case Scenario::LogisticPoint: return NullType::point();
        case Scenario::LogisticInterval: return NullType::interval(1.0);
        case Scenario::SpikeAtOne: return NullType::one_sided_right();
    }
    return NullType::one_sided_right();
}

/// pi_1(x) = (3/4) e^{6x-9} / (1 + e^{6x-9}).
inline double logistic_signal_proba(double x) {
    const double t = 6.0 * x - 9.0;
    return 0.75 / (1.0 + std::exp(-t));
}

struct LogisticSimConfig {
    std::size_t n = 3000;
    int replications = 100;
    std::vector<double> alpha_grid = {0.05, 0.1, 0.2};
    Scenario scenario = Scenario::LogisticOneSided;
    std::uint64_t seed = 0;
};

/// One simulated data set plus its ground truth.
struct SimData {
    std::vector<HypothesisRecord> records;
    std::vector<double> theta;
    std::vector<std::uint8_t> gamma;
    std::vector<std::uint8_t> is_null;
    NullType null;

    std::size_t size() const { return records.size(); }
};

/// Draw (x, gamma, theta, z) from the logistic scenario: x ~ N(0,1),
/// gamma | x ~ Bern(pi_1(x)), theta = Logistic(2, 1/2) when gamma = 1 else 0
/// (the spike-at-one variant moves half the null mass to theta = -1.5),
/// z ~ N(theta, 1). Null status follows the scenario's null type.
inline SimData gen_logistic(std::size_t n, Scenario scenario, Rng& rng) {
    SimData d;
    d.null = scenario_null(scenario);
    d.records.reserve(n);
    d.theta.resize(n);
    d.gamma.resize(n);
    d.is_null.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal();
        const bool g = rng.bernoulli(logistic_signal_proba(x));
        double theta = 0.0;
        if (g) {
            theta = rng.logistic(2.0, 0.5);
        } else if (scenario == Scenario::SpikeAtOne && rng.bernoulli(0.5)) {
            theta = -1.5;  // interior of the one-sided null: p-values pile up near 1
        }
        const double z = rng.normal(theta, 1.0);
        d.theta[i] = theta;
        d.gamma[i] = g ? 1 : 0;
        switch (d.null.kind) {
            case NullType::Kind::Point: d.is_null[i] = (theta == 0.0) ? 1 : 0; break;
            case NullType::Kind::OneSidedRight: d.is_null[i] = (theta <= 0.0) ? 1 : 0; break;
            case NullType::Kind::OneSidedLeft: d.is_null[i] = (theta >= 0.0) ? 1 : 0; break;
            case NullType::Kind::Interval:
                d.is_null[i] = (std::fabs(theta) <= d.null.delta) ? 1 : 0;
                break;
        }
        HypothesisRecord rec;
        rec.id = std::to_string(i);
        rec.x = {x};
        rec.z = z;
        rec.se = 1.0;
        d.records.push_back(std::move(rec));
    }
    return d;
}

inline std::vector<double> p_values_of(const SimData& d) {
    std::vector<double> p(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        p[i] = clamp_p(p_value(*d.records[i].z, *d.records[i].se, d.null));
    return p;
}

/// Exact log density of z given x under the logistic scenarios; the signal
/// convolution N(0,1) * Logistic(2, 1/2) is evaluated by Simpson's rule.
class LogisticTrueDensity {
public:
    explicit LogisticTrueDensity(Scenario scenario) : scenario_(scenario) {}

    double operator()(std::span<const double> x, double z) const {
        const double p1 = logistic_signal_proba(x[0]);
        double null_dens;
        if (scenario_ == Scenario::SpikeAtOne) {
            null_dens = 0.5 * norm_pdf(z, 0.0, 1.0) + 0.5 * norm_pdf(z, -1.5, 1.0);
        } else {
            null_dens = norm_pdf(z, 0.0, 1.0);
        }
        return std::log(std::max((1.0 - p1) * null_dens + p1 * signal_density(z), 1e-300));
    }

    static double signal_density(double z) {
        // integrate phi(z - theta) * logistic_pdf(theta; 2, 1/2) over theta
        const double lo = 2.0 - 16.0, hi = 2.0 + 16.0;
        const int steps = 640;  // even
        const double h = (hi - lo) / steps;
        auto f = [&](double th) {
            const double e = std::exp(-std::fabs(th - 2.0) / 0.5);
            const double lpdf = e / (0.5 * (1.0 + e) * (1.0 + e));
            return norm_pdf(z - th) * lpdf;
        };
        double s = f(lo) + f(hi);
        for (int i = 1; i < steps; ++i) s += f(lo + i * h) * ((i % 2) ? 4.0 : 2.0);
        return s * h / 3.0;
    }

private:
    Scenario scenario_;
};

// ---------------------------------------------------------------------------
// Method harness and Monte Carlo evaluation
// ---------------------------------------------------------------------------

struct Method {
    std::string name;
    std::function<std::vector<int>(const SimData&, double alpha, std::uint64_t seed)> run;
};

inline Method make_bh_method() {
    return {"bh", [](const SimData& d, double alpha, std::uint64_t) {
                return bh(p_values_of(d), alpha).indices;
            }};
}

inline Method make_storey_method(double lambda_s = 0.5) {
    return {"storey", [lambda_s](const SimData& d, double alpha, std::uint64_t) {
                return storey_bh(p_values_of(d), alpha, lambda_s).indices;
            }};
}

struct AdaptgOptions {
    std::optional<MaskingParams> masking;   // defaults to default_params(n, alpha, null)
    GmmPolicyConfig policy;
    std::optional<std::size_t> batch;
};

inline std::vector<int> run_adaptg(const SimData& d, double alpha, std::uint64_t seed,
                                   const AdaptgOptions& opts) {
    const PreparedData prepared = prepare_data(d.records, d.null);
    const MaskingParams params =
        opts.masking ? *opts.masking : default_params(d.size(), alpha, d.null);
    GmmPolicyConfig pcfg = opts.policy;
    pcfg.seed = seed;
    GmmRevealPolicy policy(pcfg);
    RunOptions ropts;
    ropts.batch_cap = opts.batch;
    ropts.keep_trace = false;
    return run(prepared, params, alpha, policy, ropts).rejected;
}

inline Method make_adaptg_method(std::string name = "adaptg", AdaptgOptions opts = {}) {
    return {std::move(name), [opts](const SimData& d, double alpha, std::uint64_t seed) {
                return run_adaptg(d, alpha, seed, opts);
            }};
}

/// AdaPT_g driven by the oracle reveal order under the true generative
/// density of the scenario.
inline Method make_adaptg_oracle_method(Scenario scenario,
                                        std::optional<MaskingParams> masking = std::nullopt) {
    return {"adaptg-oracle",
            [scenario, masking](const SimData& d, double alpha, std::uint64_t) {
                const PreparedData prepared = prepare_data(d.records, d.null);
                const MaskingParams params =
                    masking ? *masking : default_params(d.size(), alpha, d.null);
                auto policy = make_oracle_policy(LogisticTrueDensity(scenario));
                RunOptions ropts;
                ropts.keep_trace = false;
                return run(prepared, params, alpha, policy, ropts).rejected;
            }};
}

struct EvalRow {
    int replication = 0;
    std::string method;
    double alpha = 0.0;
    double fdp = 0.0;
    double tpr = 0.0;
    long rejections = 0;
    bool ok = true;
    std::string error;
};

struct EvalSummary {
    std::string method;
    double alpha = 0.0;
    double fdr_mean = 0.0, fdr_se = 0.0;
    double tpr_mean = 0.0, tpr_se = 0.0;
    int n_ok = 0, n_err = 0;
};

struct EvalReport {
    LogisticSimConfig config;
    std::vector<EvalRow> rows;
    std::vector<EvalSummary> summaries;

    const EvalSummary& summary(const std::string& method, double alpha) const {
        for (const auto& s : summaries)
            if (s.method == method && s.alpha == alpha) return s;
        throw std::out_of_range("EvalReport: no summary for " + method);
    }

    /// Paired per-replication differences of a metric between two methods.
    std::vector<double> paired_diff(const std::string& method_a, const std::string& method_b,
                                    double alpha, bool tpr_metric = true) const {
        std::map<int, double> a, b;
        for (const auto& r : rows) {
            if (!r.ok || r.alpha != alpha) continue;
            if (r.method == method_a) a[r.replication] = tpr_metric ? r.tpr : r.fdp;
            if (r.method == method_b) b[r.replication] = tpr_metric ? r.tpr : r.fdp;
        }
        std::vector<double> out;
        for (const auto& [rep, va] : a) {
            auto it = b.find(rep);
            if (it != b.end()) out.push_back(va - it->second);
        }
        return out;
    }
};

inline std::uint64_t splitmix64_of(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return splitmix64(s);
}

/// Ground-truth scoring of a rejection set.
inline std::pair<double, double> fdp_tpr(const SimData& d, std::span<const int> rejected) {
    long v = 0, true_rej = 0, non_null = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!d.is_null[i]) ++non_null;
    for (int i : rejected) {
        if (d.is_null[static_cast<std::size_t>(i)]) ++v; else ++true_rej;
    }
    const double r = static_cast<double>(rejected.size());
    const double fdp = rejected.empty() ? 0.0 : static_cast<double>(v) / r;
    const double tpr =
        non_null == 0 ? 0.0 : static_cast<double>(true_rej) / static_cast<double>(non_null);
    return {fdp, tpr};
}

/// Seeded, replication-parallel Monte Carlo evaluation of a method panel.
/// A method failure on one replication is recorded and excluded, not dropped.
inline EvalReport evaluate(const std::vector<Method>& methods, const LogisticSimConfig& cfg) {
    if (methods.empty()) throw std::invalid_argument("evaluate: no methods");
    EvalReport report;
    report.config = cfg;
    const std::size_t cells = methods.size() * cfg.alpha_grid.size();
    report.rows.resize(static_cast<std::size_t>(cfg.replications) * cells);

    parallel_for(static_cast<std::size_t>(cfg.replications), [&](std::size_t rep) {
        Rng rng = Rng::stream(cfg.seed, rep);
        const SimData data = gen_logistic(cfg.n, cfg.scenario, rng);
        std::size_t cell = 0;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            for (std::size_t ai = 0; ai < cfg.alpha_grid.size(); ++ai, ++cell) {
                EvalRow row;
                row.replication = static_cast<int>(rep);
                row.method = methods[mi].name;
                row.alpha = cfg.alpha_grid[ai];
                const std::uint64_t run_seed =
                    splitmix64_of(cfg.seed, rep * 1000 + mi * 31 + ai);
                try {
                    const auto rejected = methods[mi].run(data, row.alpha, run_seed);
                    const auto [fdp, tpr] = fdp_tpr(data, rejected);
                    row.fdp = fdp;
                    row.tpr = tpr;
                    row.rejections = static_cast<long>(rejected.size());
                } catch (const std::exception& e) {
                    row.ok = false;
                    row.error = e.what();
                }
                report.rows[rep * cells + cell] = std::move(row);
            }
        }
    });

    for (const auto& m : methods) {
        for (double alpha : cfg.alpha_grid) {
            EvalSummary s;
            s.method = m.name;
            s.alpha = alpha;
            std::vector<double> fdps, tprs;
            for (const auto& r : report.rows) {
                if (r.method != m.name || r.alpha != alpha) continue;
                if (!r.ok) { ++s.n_err; continue; }
                fdps.push_back(r.fdp);
                tprs.push_back(r.tpr);
                ++s.n_ok;
            }
            if (!fdps.empty()) {
                s.fdr_mean = mean_of(fdps);
                s.tpr_mean = mean_of(tprs);
                const double nn = static_cast<double>(fdps.size());
                s.fdr_se = std::sqrt(sample_var(fdps) / nn);
                s.tpr_se = std::sqrt(sample_var(tprs) / nn);
            }
            report.summaries.push_back(std::move(s));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Estimator conservatism check
// ---------------------------------------------------------------------------

struct ConservatismSpec {
    std::size_t n = 1000;
    MaskingParams params = default_params(1000, 0.05);
    std::optional<double> threshold;  // constant s <= alpha_m; defaults to alpha_m
    enum class NullGen { Uniform, NormalInterior } null_gen = NullGen::Uniform;
    double interior_shift = -2.0;  // theta for the super-uniform one-sided case
    int replications = 10000;
    std::uint64_t seed = 0;
};

struct ConservatismReport {
    double mean_diff = 0.0;  // Monte Carlo estimate of E[(A+1)/zeta] - E[V]
    double se = 0.0;
    double zeta = 1.0;
    int replications = 0;
};

/// Fixed-threshold Monte Carlo check of the FDP estimator's conservatism:
/// with uniform nulls the difference E[(A+1)/zeta] - E[V] equals 1/zeta.
inline ConservatismReport conservatism_check(const ConservatismSpec& spec) {
    const double s = spec.threshold.value_or(spec.params.alpha_m);
    if (!(s > 0.0 && s <= spec.params.alpha_m + 1e-12))
        throw std::invalid_argument("conservatism_check: threshold must lie in (0, alpha_m]");
    const double zeta = spec.params.zeta();
    std::vector<double> diffs(static_cast<std::size_t>(spec.replications));
    parallel_for(diffs.size(), [&](std::size_t rep) {
        Rng rng = Rng::stream(spec.seed, rep);
        long a = 0, v = 0;
        for (std::size_t i = 0; i < spec.n; ++i) {
            double p;
            if (spec.null_gen == ConservatismSpec::NullGen::Uniform) {
                p = rng.uniform01();
            } else {
                p = clamp_p(p_value(rng.normal(spec.interior_shift, 1.0), 1.0,
                                    NullType::one_sided_right()));
            }
            if (p <= s) ++v;
            const MaskedValue mv = mask(p, spec.params);
            if (mv.is_maskable && p >= spec.params.lambda && mv.m <= s) ++a;
        }
        diffs[rep] = (static_cast<double>(a) + 1.0) / zeta - static_cast<double>(v);
    });
    ConservatismReport rep;
    rep.mean_diff = mean_of(diffs);
    rep.se = std::sqrt(sample_var(diffs) / static_cast<double>(diffs.size()));
    rep.zeta = zeta;
    rep.replications = spec.replications;
    return rep;
}

// ---------------------------------------------------------------------------
// Card game brute force
// ---------------------------------------------------------------------------

/// The reveal-order card game: card i is blue with probability q_i, the count
/// of face-down blue cards S_0 is announced, and the game ends the first time
/// S_t <= s_t. Thresholds are integers, one per turn.
struct CardGame {
    std::vector<Rational> q;
    std::vector<long long> thresholds;  // s_1 .. s_n

    std::size_t size() const { return q.size(); }
};

struct CardGameVerdict {
    bool descending_optimal = true;
    std::string detail;  // first (s0, t) where the fixed policy fell short
};

namespace detail_cardgame {

struct Context {
    const CardGame* game = nullptr;
    int n = 0;
    int s0 = 0;
    std::vector<Rational> realization_p;  // P(r) for each color mask r

    Rational mass(unsigned revealed, unsigned colors) const {
        Rational total(0);
        for (unsigned r = 0; r < (1u << n); ++r) {
            if (__builtin_popcount(r) != s0) continue;
            if ((r & revealed) != colors) continue;
            total = total + realization_p[r];
        }
        return total;
    }
};

/// Max over all adaptive policies of the unnormalized P[tau <= horizon and
/// S_0 = s0]. Chance nodes sum, decision nodes take the max; this equals the
/// best value over every decision tree on reveal histories.
inline Rational optimal_value(const Context& ctx, unsigned revealed, unsigned colors, int horizon,
                              std::map<unsigned long long, Rational>& memo) {
    const int t = __builtin_popcount(revealed);
    if (t >= horizon || t >= ctx.n) return Rational(0);
    const unsigned long long key =
        (static_cast<unsigned long long>(revealed) << 20) |
        (static_cast<unsigned long long>(colors) << 8) | static_cast<unsigned long long>(horizon);
    if (auto it = memo.find(key); it != memo.end()) return it->second;

    Rational best(0);
    for (int j = 0; j < ctx.n; ++j) {
        if (revealed & (1u << j)) continue;
        Rational val(0);
        for (int b = 0; b <= 1; ++b) {
            const unsigned rev2 = revealed | (1u << j);
            const unsigned col2 = colors | (b ? (1u << j) : 0u);
            const int blues_seen = __builtin_popcount(col2);
            const long long remaining_blue = ctx.s0 - blues_seen;
            const Rational m = ctx.mass(rev2, col2);
            if (m.num == 0) continue;
            if (remaining_blue <= ctx.game->thresholds[static_cast<std::size_t>(t)]) {
                val = val + m;  // stops at turn t+1 for every consistent realization
            } else {
                val = val + optimal_value(ctx, rev2, col2, horizon, memo);
            }
        }
        if (val > best) best = val;
    }
    memo[key] = best;
    return best;
}

}  // namespace detail_cardgame

/// Unnormalized P[tau <= t, S_0 = s0] for each t = 1..n when cards are
/// revealed in the given fixed order.
inline std::vector<Rational> card_game_fixed_order(const CardGame& game,
                                                   std::span<const int> order, int s0) {
    const int n = static_cast<int>(game.size());
    std::vector<Rational> cum(static_cast<std::size_t>(n), Rational(0));
    for (unsigned r = 0; r < (1u << n); ++r) {
        if (__builtin_popcount(r) != s0) continue;
        Rational pr(1);
        for (int j = 0; j < n; ++j) {
            const Rational& qj = game.q[static_cast<std::size_t>(j)];
            pr = pr * ((r >> j & 1u) ? qj : (Rational(1) - qj));
        }
        if (pr.num == 0) continue;
        long long blues = s0;
        int tau = n;
        for (int t = 1; t <= n; ++t) {
            blues -= (r >> order[static_cast<std::size_t>(t - 1)]) & 1u;
            if (blues <= game.thresholds[static_cast<std::size_t>(t - 1)]) { tau = t; break; }
        }
        for (int t = tau; t <= n; ++t)
            cum[static_cast<std::size_t>(t - 1)] = cum[static_cast<std::size_t>(t - 1)] + pr;
    }
    return cum;
}

/// Exhaustively verify the reveal-order optimality claim on one game: for
/// every initial count S_0 and every horizon t, the descending-q fixed order
/// attains the maximum of P[tau <= t | S_0] over all adaptive reveal
/// policies. Exact arithmetic.
inline CardGameVerdict card_game_bruteforce(const CardGame& game) {
    const int n = static_cast<int>(game.size());
    if (n < 1 || n > 6) throw std::invalid_argument("card_game_bruteforce: n in [1,6]");
    if (game.thresholds.size() != game.size())
        throw std::invalid_argument("card_game_bruteforce: thresholds size mismatch");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const Rational& qa = game.q[static_cast<std::size_t>(a)];
        const Rational& qb = game.q[static_cast<std::size_t>(b)];
        if (qa != qb) return qb < qa;
        return a < b;
    });

    detail_cardgame::Context ctx;
    ctx.game = &game;
    ctx.n = n;
    ctx.realization_p.resize(1u << n);
    for (unsigned r = 0; r < (1u << n); ++r) {
        Rational pr(1);
        for (int j = 0; j < n; ++j) {
            const Rational& qj = game.q[static_cast<std::size_t>(j)];
            pr = pr * ((r >> j & 1u) ? qj : (Rational(1) - qj));
        }
        ctx.realization_p[r] = pr;
    }

    CardGameVerdict verdict;
    for (int s0 = 0; s0 <= n; ++s0) {
        ctx.s0 = s0;
        if (ctx.mass(0, 0).num == 0) continue;
        const std::vector<Rational> fixed = card_game_fixed_order(game, order, s0);
        std::map<unsigned long long, Rational> memo;
        for (int t = 1; t <= n; ++t) {
            const Rational opt = detail_cardgame::optimal_value(ctx, 0, 0, t, memo);
            const Rational& fix = fixed[static_cast<std::size_t>(t - 1)];
            if (fix < opt) {
                verdict.descending_optimal = false;
                verdict.detail = "s0=" + std::to_string(s0) + " t=" + std::to_string(t) +
                                 " fixed=" + fix.str() + " optimal=" + opt.str();
                return verdict;
            }
        }
    }
    return verdict;
}

}  // namespace adaptg
