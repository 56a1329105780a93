#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/classifier.hpp"
#include "adaptg/engine.hpp"
#include "adaptg/masking.hpp"
#include "adaptg/mathutil.hpp"
#include "adaptg/rng.hpp"

namespace adaptg {

// ---------------------------------------------------------------------------
// Analyst-visible data and candidate tables
// ---------------------------------------------------------------------------

/// The data a working model may legally see: covariates, masked values, the
/// bits of revealed hypotheses, and side information. Never the masked p's.
struct AnalystData {
    Matrix covariates;
    std::vector<double> m;
    std::vector<double> sigma;          // model-space standard errors
    std::vector<std::uint8_t> maskable;
    std::vector<std::int8_t> revealed_b;  // -1 while hidden
    std::vector<int> sign;              // point-null side info s_i
    std::vector<double> delta;          // per-record interval half-width
    NullType model_null;
    MaskingParams mask;

    std::size_t size() const { return m.size(); }

    static AnalystData from_view(const PolicyView& view) {
        AnalystData d;
        const std::size_t n = view.size();
        d.covariates = view.covariates();
        d.m.resize(n);
        d.sigma.assign(n, 1.0);
        d.maskable.resize(n);
        d.revealed_b.assign(n, -1);
        d.sign.resize(n);
        d.delta.resize(n);
        d.model_null = view.model_null();
        d.mask = view.masking();
        for (std::size_t i = 0; i < n; ++i) {
            const int ii = static_cast<int>(i);
            d.m[i] = view.masked_value(ii);
            d.maskable[i] = view.is_maskable(ii) ? 1 : 0;
            d.sign[i] = view.point_sign(ii);
            d.delta[i] = view.null_delta(ii);
            if (auto b = view.revealed_bit(ii)) d.revealed_b[i] = static_cast<std::int8_t>(*b);
        }
        return d;
    }

    NullType null_for(std::size_t i) const {
        if (model_null.is_interval()) return NullType::interval(delta[i]);
        return model_null;
    }
};

/// One reconstruction candidate for a hypothesis: implied z, its masking bit,
/// sign bit (interval nulls), and the log Jacobian |dp/dz| at that z.
struct ZCandidateRow {
    int b = 0;
    int b_prime = -1;
    double z = 0.0;
    double log_slope = 0.0;
};

struct CandidateTable {
    std::vector<std::vector<ZCandidateRow>> rows;
    std::vector<double> sigma;
    double zeta = 1.0;

    std::size_t size() const { return rows.size(); }

    static CandidateTable build(const AnalystData& d) {
        CandidateTable t;
        t.zeta = d.mask.zeta();
        t.sigma = d.sigma;
        t.rows.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) t.rows[i] = build_row(d, i);
        return t;
    }

    static std::vector<ZCandidateRow> build_row(const AnalystData& d, std::size_t i) {
        const NullType null = d.null_for(i);
        std::optional<int> side;
        if (null.is_point()) side = d.sign[i];
        const MaskedValue mv{d.m[i], d.maskable[i] != 0};
        std::vector<ZCandidateRow> out;
        for (const ZCandidate& c : z_candidates(mv, d.sigma[i], null, side, d.mask)) {
            if (d.revealed_b[i] >= 0 && c.b != d.revealed_b[i]) continue;
            out.push_back({c.b, c.b_prime, c.z, log_p_value_slope(c.z, d.sigma[i], null)});
        }
        return out;
    }

    /// Drop candidates contradicted by a newly revealed bit.
    void reveal(std::size_t i, int b) {
        auto& row = rows[i];
        std::erase_if(row, [&](const ZCandidateRow& c) { return c.b != b; });
    }

    std::vector<double> z_pool() const {
        std::vector<double> pool;
        for (const auto& row : rows)
            for (const auto& c : row) pool.push_back(c.z);
        return pool;
    }

    bool equal_sigma() const {
        if (sigma.empty()) return true;
        const auto [mn, mx] = std::minmax_element(sigma.begin(), sigma.end());
        return *mx - *mn < 1e-12;
    }
};

// ---------------------------------------------------------------------------
// Working model parameters and E-step
// ---------------------------------------------------------------------------

/// Conditional Gaussian mixture: fixed component locations/scales, mixing
/// proportions pi_k(x) from the classifier. With symmetric=true each component
/// is the even mixture of N(mu_k, tau2_k) and N(-mu_k, tau2_k).
struct GmmParams {
    int K = 1;
    std::vector<double> mu;
    std::vector<double> tau2;
    bool symmetric = false;
    ClassifierPtr classifier;
};

/// E-step responsibilities. Entries are laid out per hypothesis as
/// (candidate, component, sign-branch); sign branches exist only for
/// symmetric models.
struct WeightTable {
    std::vector<std::size_t> offset;    // row start into w
    std::vector<double> w;
    int K = 1;
    int n_sign = 1;
    std::vector<double> row_loglik;     // log sum of unnormalized weights
    Matrix w_ik_plus;                   // n x K, summed over candidates/signs
    std::vector<double> q_blue;         // P(b_i = 1 | data) under the model

    std::size_t stride(std::size_t row_cands) const {
        return row_cands * static_cast<std::size_t>(K) * static_cast<std::size_t>(n_sign);
    }
    double at(const CandidateTable& t, std::size_t i, std::size_t c, int k, int s = 0) const {
        (void)t;
        return w[offset[i] + (c * static_cast<std::size_t>(K) + static_cast<std::size_t>(k)) *
                                 static_cast<std::size_t>(n_sign) +
                static_cast<std::size_t>(s)];
    }
};

inline WeightTable e_step(const CandidateTable& table, const Matrix& features,
                          const GmmParams& params) {
    const std::size_t n = table.size();
    const int K = params.K;
    const int ns = params.symmetric ? 2 : 1;
    const double log_zeta = std::log(table.zeta);
    const Matrix proba = params.classifier->predict_proba(features);

    WeightTable wt;
    wt.K = K;
    wt.n_sign = ns;
    wt.offset.resize(n + 1);
    wt.row_loglik.resize(n);
    wt.w_ik_plus = Matrix(n, static_cast<std::size_t>(K));
    wt.q_blue.assign(n, 0.0);

    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        wt.offset[i] = total;
        total += wt.stride(table.rows[i].size());
    }
    wt.offset[n] = total;
    wt.w.resize(total);

    std::vector<double> logv;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        const double s2 = table.sigma[i] * table.sigma[i];
        logv.clear();
        for (const auto& c : row) {
            const double base = (c.b == 1 ? log_zeta : 0.0) - c.log_slope;
            for (int k = 0; k < K; ++k) {
                const double v = params.tau2[static_cast<std::size_t>(k)] + s2;
                const double lpi =
                    std::log(std::max(proba(i, static_cast<std::size_t>(k)), 1e-300));
                if (ns == 1) {
                    logv.push_back(base + lpi +
                                   log_norm_pdf(c.z, params.mu[static_cast<std::size_t>(k)], v));
                } else {
                    const double lhalf = -0.6931471805599453;  // log(1/2)
                    logv.push_back(base + lpi + lhalf +
                                   log_norm_pdf(c.z, params.mu[static_cast<std::size_t>(k)], v));
                    logv.push_back(base + lpi + lhalf +
                                   log_norm_pdf(c.z, -params.mu[static_cast<std::size_t>(k)], v));
                }
            }
        }
        const double lse = log_sum_exp(logv);
        wt.row_loglik[i] = lse;
        std::size_t at = wt.offset[i];
        std::size_t idx = 0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            for (int k = 0; k < K; ++k) {
                for (int s = 0; s < ns; ++s, ++idx) {
                    const double wv = std::exp(logv[idx] - lse);
                    wt.w[at + idx] = wv;
                    wt.w_ik_plus(i, static_cast<std::size_t>(k)) += wv;
                    if (row[c].b == 1) wt.q_blue[i] += wv;
                }
            }
        }
    }
    return wt;
}

/// Marginal blue probabilities q_i = sum_k w_{ik1} from a fitted model.
inline std::vector<double> q_scores(const CandidateTable& table, const Matrix& features,
                                    const GmmParams& params) {
    return e_step(table, features, params).q_blue;
}

// ---------------------------------------------------------------------------
// M-step
// ---------------------------------------------------------------------------

enum class ClassifierKind { Intercept, Logit, Net };

inline std::string classifier_kind_name(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::Intercept: return "intercept";
        case ClassifierKind::Logit: return "logit";
        case ClassifierKind::Net: return "nnet";
    }
    return "?";
}

struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::Logit;
    int hidden = 2;
    LogitConfig logit;
    NetConfig net;
};

inline ClassifierPtr fit_classifier(const ClassifierSpec& spec, const Matrix& features,
                                    const Matrix& weights, std::uint64_t seed,
                                    const ClassifierModel* warm) {
    if (weights.cols() < 2) return fit_intercept_only(weights);
    switch (spec.kind) {
        case ClassifierKind::Intercept: return fit_intercept_only(weights);
        case ClassifierKind::Logit: return fit_multinomial_logit(features, weights, spec.logit, warm);
        case ClassifierKind::Net: {
            NetConfig cfg = spec.net;
            cfg.seed = seed;
            return fit_shallow_net(features, weights, spec.hidden, cfg, warm);
        }
    }
    throw std::logic_error("fit_classifier: unknown kind");
}

struct MStepConfig {
    double tau2_floor = 1e-8;
    std::uint64_t seed = 0;
};

namespace detail {

struct PseudoObs {
    double z;
    double w;
    double s2;
};

inline double component_loglik(std::span<const PseudoObs> obs, double mu, double tau2) {
    double ll = 0.0;
    for (const auto& o : obs)
        if (o.w > 0.0) ll += o.w * log_norm_pdf(o.z, mu, tau2 + o.s2);
    return ll;
}

/// Maximizer of the weighted component log-density for equal sigma:
/// weighted mean and variance with tau2 = max(var - sigma^2, floor).
inline std::pair<double, double> component_closed_form(std::span<const PseudoObs> obs,
                                                       double floor_) {
    double sw = 0.0, sz = 0.0;
    for (const auto& o : obs) { sw += o.w; sz += o.w * o.z; }
    const double mu = sz / sw;
    double sv = 0.0;
    for (const auto& o : obs) sv += o.w * (o.z - mu) * (o.z - mu);
    const double total_var = sv / sw;
    return {mu, std::max(total_var - obs.front().s2, floor_)};
}

/// Bounded maximization for heterogeneous sigma: alternate the exact mu update
/// with Brent's method on log(tau2) over [log floor, log hi].
inline std::pair<double, double> component_optimize(std::span<const PseudoObs> obs, double mu0,
                                                    double tau20, double floor_) {
    double mu = mu0;
    double tau2 = std::max(tau20, floor_);
    double hi = floor_;
    for (const auto& o : obs) hi = std::max(hi, (o.z - mu0) * (o.z - mu0) + 1.0);
    const double ulo = std::log(floor_), uhi = std::log(hi * 4.0 + 1.0);

    auto best_mu = [&](double t2) {
        double num = 0.0, den = 0.0;
        for (const auto& o : obs) {
            const double invv = o.w / (t2 + o.s2);
            num += invv * o.z;
            den += invv;
        }
        return num / den;
    };
    auto obj_u = [&](double u) { return component_loglik(obs, mu, std::exp(u)); };

    for (int sweep = 0; sweep < 8; ++sweep) {
        const double mu_prev = mu, tau2_prev = tau2;
        mu = best_mu(tau2);
        // golden-section with parabolic-free safeguard on u
        double a = ulo, b = uhi;
        const double gr = 0.6180339887498949;
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = obj_u(x1), f2 = obj_u(x2);
        for (int it = 0; it < 80; ++it) {
            if (f1 < f2) {
                a = x1; x1 = x2; f1 = f2;
                x2 = a + gr * (b - a); f2 = obj_u(x2);
            } else {
                b = x2; x2 = x1; f2 = f1;
                x1 = b - gr * (b - a); f1 = obj_u(x1);
            }
            if (b - a < 1e-12) break;
        }
        tau2 = std::exp(0.5 * (a + b));
        if (std::fabs(mu - mu_prev) < 1e-12 && std::fabs(tau2 - tau2_prev) < 1e-12) break;
    }
    return {mu, tau2};
}

}  // namespace detail

/// M-step: refit the classifier on the summed responsibilities and each
/// Gaussian component on its weighted candidate pseudo-observations. Updates
/// that fail to improve their share of the EM objective are discarded, so the
/// step never decreases the penalized observed-data objective.
inline GmmParams m_step(const CandidateTable& table, const Matrix& features,
                        const WeightTable& wt, const GmmParams& old, const ClassifierSpec& spec,
                        const MStepConfig& cfg, std::vector<std::string>* notes = nullptr) {
    const std::size_t n = table.size();
    const int K = old.K;
    const int ns = wt.n_sign;

    GmmParams out = old;

    ClassifierPtr cand = fit_classifier(spec, features, wt.w_ik_plus, cfg.seed, old.classifier.get());
    const double q_new = weighted_log_likelihood(*cand, features, wt.w_ik_plus) - cand->penalty();
    const double q_old =
        weighted_log_likelihood(*old.classifier, features, wt.w_ik_plus) - old.classifier->penalty();
    if (q_new >= q_old - 1e-12) {
        out.classifier = std::move(cand);
    } else if (notes) {
        notes->push_back("classifier update rejected (objective would decrease)");
    }

    std::vector<detail::PseudoObs> obs;
    for (int k = 0; k < K; ++k) {
        obs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = table.rows[i];
            const double s2 = table.sigma[i] * table.sigma[i];
            for (std::size_t c = 0; c < row.size(); ++c) {
                for (int s = 0; s < ns; ++s) {
                    const double wv = wt.at(table, i, c, k, s);
                    if (wv <= 0.0) continue;
                    const double z = (s == 0) ? row[c].z : -row[c].z;
                    obs.push_back({z, wv, s2});
                }
            }
        }
        double sw = 0.0;
        for (const auto& o : obs) sw += o.w;
        if (obs.empty() || sw < 1e-12) {
            if (notes) notes->push_back("component " + std::to_string(k) + " empty; kept");
            continue;
        }
        const double old_ll = detail::component_loglik(
            obs, old.mu[static_cast<std::size_t>(k)],
            std::max(old.tau2[static_cast<std::size_t>(k)], cfg.tau2_floor));
        std::pair<double, double> upd;
        if (table.equal_sigma()) {
            upd = detail::component_closed_form(obs, cfg.tau2_floor);
        } else {
            upd = detail::component_optimize(obs, old.mu[static_cast<std::size_t>(k)],
                                             old.tau2[static_cast<std::size_t>(k)],
                                             cfg.tau2_floor);
        }
        const double new_ll = detail::component_loglik(obs, upd.first, upd.second);
        if (new_ll >= old_ll - 1e-12) {
            out.mu[static_cast<std::size_t>(k)] = upd.first;
            out.tau2[static_cast<std::size_t>(k)] = upd.second;
        } else if (notes) {
            notes->push_back("component " + std::to_string(k) + " update rejected; kept");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization (K-means) and the EM driver
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<double> centers;
    std::vector<double> variances;
    std::vector<double> proportions;
};

/// Seeded 1-D K-means with restarts. Empty clusters are refilled by splitting
/// the largest cluster at its farthest point.
inline KMeansResult kmeans_1d(std::span<const double> xs, int K, Rng& rng, int restarts = 10) {
    if (xs.empty()) throw std::invalid_argument("kmeans_1d: empty");
    const std::size_t n = xs.size();
    std::vector<double> best_centers;
    double best_wcss = std::numeric_limits<double>::infinity();
    std::vector<int> assign(n);

    for (int r = 0; r < restarts; ++r) {
        std::vector<double> centers;
        for (int k = 0; k < K; ++k) centers.push_back(xs[rng.index(n)]);
        std::sort(centers.begin(), centers.end());
        for (int it = 0; it < 50; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                int bk = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (int k = 0; k < K; ++k) {
                    const double d = std::fabs(xs[i] - centers[static_cast<std::size_t>(k)]);
                    if (d < bd) { bd = d; bk = k; }
                }
                assign[i] = bk;
            }
            std::vector<double> sum(static_cast<std::size_t>(K), 0.0);
            std::vector<std::size_t> cnt(static_cast<std::size_t>(K), 0);
            for (std::size_t i = 0; i < n; ++i) {
                sum[static_cast<std::size_t>(assign[i])] += xs[i];
                ++cnt[static_cast<std::size_t>(assign[i])];
            }
            for (int k = 0; k < K; ++k) {
                if (cnt[static_cast<std::size_t>(k)] == 0) {
                    // split the largest cluster at its farthest member
                    int big = static_cast<int>(std::max_element(cnt.begin(), cnt.end()) -
                                               cnt.begin());
                    double far_x = centers[static_cast<std::size_t>(big)], far_d = -1.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        if (assign[i] != big) continue;
                        const double d =
                            std::fabs(xs[i] - centers[static_cast<std::size_t>(big)]);
                        if (d > far_d) { far_d = d; far_x = xs[i]; }
                    }
                    centers[static_cast<std::size_t>(k)] = far_x;
                } else {
                    centers[static_cast<std::size_t>(k)] =
                        sum[static_cast<std::size_t>(k)] /
                        static_cast<double>(cnt[static_cast<std::size_t>(k)]);
                }
            }
        }
        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = xs[i] - centers[static_cast<std::size_t>(assign[i])];
            wcss += d * d;
        }
        if (wcss < best_wcss) {
            best_wcss = wcss;
            best_centers = centers;
        }
    }

    std::sort(best_centers.begin(), best_centers.end());
    KMeansResult res;
    res.centers = best_centers;
    res.variances.assign(static_cast<std::size_t>(K), 0.0);
    res.proportions.assign(static_cast<std::size_t>(K), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < n; ++i) {
        int bk = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
            const double d = std::fabs(xs[i] - res.centers[static_cast<std::size_t>(k)]);
            if (d < bd) { bd = d; bk = k; }
        }
        const auto ku = static_cast<std::size_t>(bk);
        const double d = xs[i] - res.centers[ku];
        res.variances[ku] += d * d;
        ++cnt[ku];
    }
    for (int k = 0; k < K; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        if (cnt[ku] > 0) res.variances[ku] /= static_cast<double>(cnt[ku]);
        res.proportions[ku] = std::max(static_cast<double>(cnt[ku]), 0.5) /
                              static_cast<double>(n);
    }
    const double tot = std::accumulate(res.proportions.begin(), res.proportions.end(), 0.0);
    for (auto& p : res.proportions) p /= tot;
    return res;
}

/// K-means initialization on the pooled candidate z multiset; classifier
/// starts intercept-only at the cluster proportions.
inline GmmParams init_params(const CandidateTable& table, int K, bool symmetric, double tau2_floor,
                             std::uint64_t seed) {
    const std::vector<double> pool = table.z_pool();
    if (pool.empty()) throw std::invalid_argument("init_params: no candidates");
    Rng rng(seed ^ 0x1234abcdULL);
    const KMeansResult km = kmeans_1d(pool, K, rng, 10);
    double mean_s2 = 0.0;
    for (double s : table.sigma) mean_s2 += s * s;
    mean_s2 /= static_cast<double>(table.sigma.size());

    GmmParams p;
    p.K = K;
    p.symmetric = symmetric;
    p.mu = km.centers;
    p.tau2.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        p.tau2[static_cast<std::size_t>(k)] =
            std::max(km.variances[static_cast<std::size_t>(k)] - mean_s2, tau2_floor);
    p.classifier = std::make_shared<InterceptOnlyModel>(km.proportions);
    return p;
}

// ---------------------------------------------------------------------------
// EM driver, model selection
// ---------------------------------------------------------------------------

struct EmConfig {
    int max_iter = 30;
    double rel_tol = 1e-6;
    bool symmetric = false;
    std::uint64_t seed = 0;
};

struct FitResult {
    GmmParams params;
    std::vector<double> loglik_path;  // penalized observed-data objective per iteration
    double loglik_raw = 0.0;          // unpenalized observed log-likelihood at the optimum
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> notes;
    std::vector<double> q_blue;       // final E-step blue marginals
};

inline double tau2_floor_for(const CandidateTable& table) {
    const auto pool = table.z_pool();
    const double v = sample_var(pool);
    return std::max(1e-4 * v, 1e-10);
}

inline FitResult fit_em(const CandidateTable& table, const Matrix& features,
                        const ClassifierSpec& spec, const EmConfig& cfg,
                        std::optional<GmmParams> warm_start = std::nullopt, int K = 2) {
    FitResult res;
    const double floor_ = tau2_floor_for(table);

    int k_eff = warm_start ? warm_start->K : K;
    {
        const std::vector<double> pool = table.z_pool();
        const std::set<double> distinct(pool.begin(), pool.end());
        if (static_cast<int>(distinct.size()) < k_eff) {
            k_eff = std::max<int>(1, static_cast<int>(distinct.size()));
            res.notes.push_back("K reduced to " + std::to_string(k_eff) +
                                " (too few distinct candidates)");
            warm_start.reset();
        }
    }

    GmmParams params = warm_start ? *warm_start
                                  : init_params(table, k_eff, cfg.symmetric, floor_, cfg.seed);
    params.symmetric = cfg.symmetric || params.symmetric;

    MStepConfig mcfg;
    mcfg.tau2_floor = floor_;
    mcfg.seed = cfg.seed;

    double prev_obj = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.max_iter; ++it) {
        WeightTable wt = e_step(table, features, params);
        double obj = 0.0;
        for (double l : wt.row_loglik) obj += l;
        const double raw = obj;
        obj -= params.classifier->penalty();
        res.loglik_path.push_back(obj);
        res.loglik_raw = raw;
        res.q_blue = wt.q_blue;
        res.iterations = it;
        if (it > 0 && obj - prev_obj <= cfg.rel_tol * (1.0 + std::fabs(obj))) {
            res.converged = true;
            break;
        }
        prev_obj = obj;
        if (it + 1 < cfg.max_iter)
            params = m_step(table, features, wt, params, spec, mcfg, &res.notes);
    }
    res.params = std::move(params);
    return res;
}

enum class ModelCriterion { AIC, BIC };

struct ModelCandidate {
    int K = 2;
    FeatureMap::Kind feat_kind = FeatureMap::Kind::InterceptOnly;
    int df = 0;
    ClassifierKind classifier = ClassifierKind::Intercept;
    int hidden = 2;
    double score = std::numeric_limits<double>::quiet_NaN();

    std::string name() const {
        std::string f = (feat_kind == FeatureMap::Kind::InterceptOnly)
                            ? "intercept-only"
                            : (feat_kind == FeatureMap::Kind::Identity ? "identity"
                                                                       : "ns" + std::to_string(df));
        return "K=" + std::to_string(K) + ",feat=" + f + ",clf=" + classifier_kind_name(classifier);
    }
};

/// Default grid: K in {2..5} x featurization in {intercept-only, ns2, ns3, ns4}.
inline std::vector<ModelCandidate> default_candidate_grid(
    ClassifierKind clf = ClassifierKind::Logit, int hidden = 2) {
    std::vector<ModelCandidate> grid;
    for (int K : {2, 3, 4, 5}) {
        grid.push_back({K, FeatureMap::Kind::InterceptOnly, 0, ClassifierKind::Intercept, hidden});
        if (clf == ClassifierKind::Intercept) continue;
        for (int df : {2, 3, 4})
            grid.push_back({K, FeatureMap::Kind::NaturalCubicSpline, df, clf, hidden});
    }
    return grid;
}

struct SelectedModel {
    ModelCandidate candidate;
    FeatureMap feature_map;
    Matrix features;
    FitResult fit;
    std::vector<ModelCandidate> scored;  // every attempted candidate with its score
};

inline Matrix features_for(const FeatureMap& fm, const Matrix& covariates, ClassifierKind clf) {
    Matrix f = fm.transform(covariates);
    if (clf != ClassifierKind::Net) return f;
    Matrix out(f.rows(), f.cols() + 1);  // the net has no bias terms of its own
    for (std::size_t i = 0; i < f.rows(); ++i) {
        out(i, 0) = 1.0;
        for (std::size_t j = 0; j < f.cols(); ++j) out(i, j + 1) = f(i, j);
    }
    return out;
}

inline double information_criterion(ModelCriterion crit, double loglik_raw, int params,
                                    std::size_t n) {
    if (crit == ModelCriterion::AIC) return 2.0 * params - 2.0 * loglik_raw;
    return std::log(static_cast<double>(n)) * params - 2.0 * loglik_raw;
}

/// Fit every candidate on the masked view and keep the criterion minimizer.
/// If every candidate fails, fall back to intercept-only with K = 2.
inline SelectedModel select_model(const CandidateTable& table, const Matrix& covariates,
                                  std::vector<ModelCandidate> candidates, ModelCriterion criterion,
                                  const EmConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("select_model: no candidates");
    SelectedModel best;
    bool have_best = false;
    std::set<std::string> seen;
    std::uint64_t idx = 0;
    for (ModelCandidate cand : candidates) {
        ++idx;
        FeatureMap fm = (cand.feat_kind == FeatureMap::Kind::InterceptOnly)
                            ? FeatureMap::intercept_only()
                            : (cand.feat_kind == FeatureMap::Kind::Identity
                                   ? FeatureMap::identity()
                                   : FeatureMap::natural_cubic_spline(cand.df));
        try {
            fm.fit(covariates);
        } catch (const std::exception&) {
            continue;
        }
        ClassifierKind clf = cand.classifier;
        if (fm.output_dim() == 0) {
            clf = ClassifierKind::Intercept;
            cand.feat_kind = FeatureMap::Kind::InterceptOnly;
            cand.df = 0;
            cand.classifier = clf;
            fm = FeatureMap::intercept_only();
        }
        const std::string key = cand.name();
        if (!seen.insert(key).second) continue;

        ClassifierSpec spec;
        spec.kind = clf;
        spec.hidden = cand.hidden;
        EmConfig ecfg = cfg;
        ecfg.seed = cfg.seed ^ (0x9e37ULL * idx);
        try {
            Matrix features = features_for(fm, covariates, clf);
            FitResult fit = fit_em(table, features, spec, ecfg, std::nullopt, cand.K);
            const int n_params =
                fit.params.classifier->param_count() + 2 * fit.params.K;
            cand.score = information_criterion(criterion, fit.loglik_raw, n_params, table.size());
            best.scored.push_back(cand);
            if (!have_best || cand.score < best.candidate.score) {
                best.candidate = cand;
                best.feature_map = fm;
                best.features = std::move(features);
                best.fit = std::move(fit);
                have_best = true;
            }
        } catch (const std::exception&) {
            best.scored.push_back(cand);  // NaN score marks the failure
        }
    }
    if (!have_best) {
        ModelCandidate fallback{2, FeatureMap::Kind::InterceptOnly, 0, ClassifierKind::Intercept,
                                2};
        FeatureMap fm = FeatureMap::intercept_only();
        fm.fit(covariates);
        Matrix features = features_for(fm, covariates, ClassifierKind::Intercept);
        ClassifierSpec spec;
        spec.kind = ClassifierKind::Intercept;
        FitResult fit = fit_em(table, features, spec, cfg, std::nullopt, 2);
        fallback.score = information_criterion(
            criterion, fit.loglik_raw, fit.params.classifier->param_count() + 2 * fit.params.K,
            table.size());
        best.candidate = fallback;
        best.feature_map = fm;
        best.features = std::move(features);
        best.fit = std::move(fit);
        best.scored.push_back(fallback);
    }
    return best;
}

// ---------------------------------------------------------------------------
// The model-guided reveal policy
// ---------------------------------------------------------------------------

struct GmmPolicyConfig {
    std::vector<ModelCandidate> grid = default_candidate_grid();
    ModelCriterion criterion = ModelCriterion::AIC;
    bool symmetric = false;
    int select_max_iter = 30;
    int refit_max_iter = 3;
    std::uint64_t seed = 0;
};

/// Reveal policy backed by the conditional GMM working model: selects a model
/// by information criterion on the first call, then refits with warm starts
/// and reveals the hypotheses with the highest estimated blue probability.
/// Falls back to index-order reveals for a batch if a fit fails.
class GmmRevealPolicy : public RevealPolicy {
public:
    explicit GmmRevealPolicy(GmmPolicyConfig cfg = {}) : cfg_(std::move(cfg)) {}

    std::vector<int> choose(const PolicyView& view) override {
        note_.clear();
        try {
            sync(view);
            std::vector<double> q;
            if (!selected_) {
                EmConfig ecfg;
                ecfg.max_iter = cfg_.select_max_iter;
                ecfg.symmetric = cfg_.symmetric;
                ecfg.seed = cfg_.seed;
                selection_ = select_model(table_, data_.covariates, cfg_.grid, cfg_.criterion, ecfg);
                selected_ = true;
                q = selection_.fit.q_blue;
            } else {
                EmConfig ecfg;
                ecfg.max_iter = cfg_.refit_max_iter;
                ecfg.symmetric = cfg_.symmetric;
                ecfg.seed = cfg_.seed;
                ClassifierSpec spec;
                spec.kind = selection_.candidate.classifier;
                spec.hidden = selection_.candidate.hidden;
                FitResult fit = fit_em(table_, selection_.features, spec, ecfg,
                                       selection_.fit.params, selection_.candidate.K);
                ++refits_;
                selection_.fit.params = fit.params;
                selection_.fit.loglik_raw = fit.loglik_raw;
                for (double v : fit.loglik_path) selection_.fit.loglik_path.push_back(v);
                q = fit.q_blue;
            }
            std::vector<std::pair<int, double>> ranked;
            for (int i : view.masked_indices())
                ranked.emplace_back(i, q[static_cast<std::size_t>(i)]);
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            const std::size_t take = std::min(view.batch_cap(), ranked.size());
            std::vector<int> batch;
            batch.reserve(take);
            for (std::size_t i = 0; i < take; ++i) batch.push_back(ranked[i].first);
            return batch;
        } catch (const std::exception& e) {
            note_ = std::string("model fit failed (") + e.what() + "); index-order fallback";
            auto masked = view.masked_indices();
            const std::size_t take = std::min(view.batch_cap(), masked.size());
            return {masked.begin(), masked.begin() + static_cast<std::ptrdiff_t>(take)};
        }
    }

    std::string last_note() const override { return note_; }
    bool has_selection() const { return selected_; }
    const SelectedModel& selection() const { return selection_; }
    int refit_count() const { return refits_; }

private:
    void sync(const PolicyView& view) {
        if (!built_) {
            data_ = AnalystData::from_view(view);
            table_ = CandidateTable::build(data_);
            built_ = true;
        } else {
            for (std::size_t i = 0; i < data_.size(); ++i) {
                if (data_.revealed_b[i] >= 0 || data_.maskable[i] == 0) continue;
                if (auto b = view.revealed_bit(static_cast<int>(i))) {
                    data_.revealed_b[i] = static_cast<std::int8_t>(*b);
                    table_.reveal(i, *b);
                }
            }
        }
    }

    GmmPolicyConfig cfg_;
    AnalystData data_;
    CandidateTable table_;
    bool built_ = false;
    bool selected_ = false;
    SelectedModel selection_;
    int refits_ = 0;
    std::string note_;
};

}  // namespace adaptg
