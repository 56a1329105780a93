#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/mathutil.hpp"
#include "adaptg/rng.hpp"

namespace adaptg {

// ---------------------------------------------------------------------------
// Natural cubic spline basis
// ---------------------------------------------------------------------------

/// Natural cubic spline basis with df columns (no intercept column): x plus
/// df-1 curvature terms. Boundary knots at min/max, interior knots at equally
/// spaced quantiles. Linear beyond the boundary knots.
struct SplineBasis {
    std::vector<double> knots;  // sorted, first/last are the boundary knots

    static SplineBasis fit(std::span<const double> x, int df) {
        if (df < 2) throw std::invalid_argument("spline_basis: df must be >= 2");
        if (x.size() <= static_cast<std::size_t>(df))
            throw std::invalid_argument("spline_basis: need n > df");
        std::vector<double> sorted(x.begin(), x.end());
        std::sort(sorted.begin(), sorted.end());
        SplineBasis b;
        b.knots.push_back(sorted.front());
        for (int j = 1; j < df; ++j)
            b.knots.push_back(quantile_sorted(sorted, static_cast<double>(j) / df));
        b.knots.push_back(sorted.back());
        b.knots.erase(std::unique(b.knots.begin(), b.knots.end()), b.knots.end());
        if (b.knots.size() < 2) b.knots.clear();  // constant covariate
        return b;
    }

    bool degenerate() const { return knots.size() < 3; }
    int dim() const { return degenerate() ? (knots.empty() ? 0 : 1)
                                          : static_cast<int>(knots.size()) - 1; }

    void eval(double x, std::span<double> out) const {
        if (degenerate()) {
            if (!knots.empty()) out[0] = x;
            return;
        }
        const std::size_t m = knots.size();
        const double xi_last = knots[m - 1];
        auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
        auto dk = [&](std::size_t j) {
            return (cube(x - knots[j]) - cube(x - xi_last)) / (xi_last - knots[j]);
        };
        out[0] = x;
        const double d_last = dk(m - 2);
        for (std::size_t j = 0; j + 2 < m; ++j) out[j + 1] = dk(j) - d_last;
    }
};

inline Matrix spline_basis(std::span<const double> x, int df) {
    const SplineBasis b = SplineBasis::fit(x, df);
    if (b.knots.empty()) return Matrix(x.size(), 1, 1.0);  // constant covariate fallback
    Matrix out(x.size(), static_cast<std::size_t>(b.dim()));
    for (std::size_t i = 0; i < x.size(); ++i) b.eval(x[i], out.row(i));
    return out;
}

/// Featurization psi(x). Spline maps are fit per covariate column and their
/// bases concatenated; constant columns are skipped.
struct FeatureMap {
    enum class Kind { InterceptOnly, NaturalCubicSpline, Identity };

    Kind kind = Kind::InterceptOnly;
    int df = 0;
    std::vector<int> columns;            // raw columns that produced features
    std::vector<SplineBasis> bases;      // one per retained column (spline kind)

    static FeatureMap intercept_only() { return {}; }
    static FeatureMap identity() { return {Kind::Identity, 0, {}, {}}; }
    static FeatureMap natural_cubic_spline(int df) {
        if (df < 2) throw std::invalid_argument("FeatureMap: spline df >= 2");
        return {Kind::NaturalCubicSpline, df, {}, {}};
    }

    std::string name() const {
        switch (kind) {
            case Kind::InterceptOnly: return "intercept-only";
            case Kind::NaturalCubicSpline: return "ns" + std::to_string(df);
            case Kind::Identity: return "identity";
        }
        return "?";
    }

    void fit(const Matrix& covariates) {
        columns.clear();
        bases.clear();
        if (kind == Kind::InterceptOnly) return;
        for (std::size_t j = 0; j < covariates.cols(); ++j) {
            std::vector<double> col(covariates.rows());
            for (std::size_t i = 0; i < covariates.rows(); ++i) col[i] = covariates(i, j);
            const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
            if (*mx - *mn <= 0.0) continue;  // constant column carries no signal
            if (kind == Kind::Identity) {
                columns.push_back(static_cast<int>(j));
            } else {
                SplineBasis b = SplineBasis::fit(col, df);
                if (b.knots.empty()) continue;
                columns.push_back(static_cast<int>(j));
                bases.push_back(std::move(b));
            }
        }
    }

    int output_dim() const {
        if (kind == Kind::InterceptOnly) return 0;
        if (kind == Kind::Identity) return static_cast<int>(columns.size());
        int d = 0;
        for (const auto& b : bases) d += b.dim();
        return d;
    }

    Matrix transform(const Matrix& covariates) const {
        const std::size_t n = covariates.rows();
        Matrix out(n, static_cast<std::size_t>(output_dim()));
        if (kind == Kind::InterceptOnly) return out;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t at = 0;
            for (std::size_t c = 0; c < columns.size(); ++c) {
                const double x = covariates(i, static_cast<std::size_t>(columns[c]));
                if (kind == Kind::Identity) {
                    out(i, at++) = x;
                } else {
                    const auto dim = static_cast<std::size_t>(bases[c].dim());
                    bases[c].eval(x, out.row(i).subspan(at, dim));
                    at += dim;
                }
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Classifier models pi_k(x; beta)
// ---------------------------------------------------------------------------

/// Class-probability model used in the M-step: fit on fractional case
/// weights, predict a probability row per observation. Fitted models are
/// immutable.
class ClassifierModel {
public:
    virtual ~ClassifierModel() = default;
    virtual Matrix predict_proba(const Matrix& features) const = 0;
    virtual int param_count() const = 0;
    virtual double penalty() const { return 0.0; }  // ridge term at the fitted params
    virtual std::string name() const = 0;
};

using ClassifierPtr = std::shared_ptr<const ClassifierModel>;

/// Weighted multinomial log-likelihood sum_i sum_k w_ik log pi_k(x_i).
inline double weighted_log_likelihood(const ClassifierModel& model, const Matrix& features,
                                      const Matrix& weights) {
    const Matrix proba = model.predict_proba(features);
    double ll = 0.0;
    for (std::size_t i = 0; i < weights.rows(); ++i)
        for (std::size_t k = 0; k < weights.cols(); ++k)
            if (weights(i, k) > 0.0) ll += weights(i, k) * std::log(std::max(proba(i, k), 1e-300));
    return ll;
}

class InterceptOnlyModel : public ClassifierModel {
public:
    explicit InterceptOnlyModel(std::vector<double> proba) : proba_(std::move(proba)) {}

    /// Closed form: weighted class frequencies.
    static std::shared_ptr<InterceptOnlyModel> fit(const Matrix& weights) {
        const std::size_t n = weights.rows(), K = weights.cols();
        std::vector<double> p(K, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < K; ++k) p[k] += weights(i, k);
        double tot = std::accumulate(p.begin(), p.end(), 0.0);
        if (tot <= 0.0) { std::fill(p.begin(), p.end(), 1.0); tot = static_cast<double>(K); }
        for (auto& v : p) v /= tot;
        return std::make_shared<InterceptOnlyModel>(std::move(p));
    }

    Matrix predict_proba(const Matrix& features) const override {
        Matrix out(features.rows(), proba_.size());
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t k = 0; k < proba_.size(); ++k) out(i, k) = proba_[k];
        return out;
    }
    int param_count() const override { return static_cast<int>(proba_.size()) - 1; }
    std::string name() const override { return "intercept"; }
    const std::vector<double>& proba() const { return proba_; }

private:
    std::vector<double> proba_;
};

struct Standardizer {
    std::vector<double> center, scale;

    static Standardizer fit(const Matrix& features) {
        Standardizer s;
        const std::size_t n = features.rows(), d = features.cols();
        s.center.assign(d, 0.0);
        s.scale.assign(d, 1.0);
        if (n == 0) return s;
        for (std::size_t j = 0; j < d; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += features(i, j);
            m /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dd = features(i, j) - m;
                v += dd * dd;
            }
            v /= static_cast<double>(n);
            if (v > 1e-24) {  // constant columns pass through untouched
                s.center[j] = m;
                s.scale[j] = std::sqrt(v);
            }
        }
        return s;
    }

    Matrix apply(const Matrix& features) const {
        Matrix out = features;
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j)
                out(i, j) = (out(i, j) - center[j]) / scale[j];
        return out;
    }
};

struct LogitConfig {
    double ridge = 1e-4;   // applied to non-intercept weights only
    int max_iter = 60;
    double grad_tol = 1e-9;
};

/// Multinomial logistic regression with softmax link, class K as reference,
/// fit by Newton's method on the ridge-penalized weighted log-likelihood.
/// Features are standardized internally; an intercept column is added.
class MultinomialLogit : public ClassifierModel {
public:
    static std::shared_ptr<MultinomialLogit> fit(const Matrix& features, const Matrix& weights,
                                                 const LogitConfig& cfg = {},
                                                 const MultinomialLogit* warm = nullptr) {
        const std::size_t n = weights.rows();
        const std::size_t K = weights.cols();
        if (K < 2) throw std::invalid_argument("fit_multinomial_logit: K >= 2");
        if (features.rows() != n) throw std::invalid_argument("fit_multinomial_logit: shape");

        auto model = std::make_shared<MultinomialLogit>();
        model->K_ = K;
        model->std_ = Standardizer::fit(features);
        model->cfg_ = cfg;
        const Matrix xs = model->std_.apply(features);
        const std::size_t d1 = features.cols() + 1;  // + intercept
        const std::size_t nfree = (K - 1) * d1;
        std::vector<double> beta(nfree, 0.0);
        if (warm && warm->K_ == K && warm->beta_.size() == nfree) beta = warm->beta_;

        auto row_scores = [&](std::size_t i, const std::vector<double>& b, std::span<double> sc) {
            for (std::size_t k = 0; k + 1 < K; ++k) {
                double s = b[k * d1];  // intercept
                for (std::size_t j = 0; j + 1 < d1; ++j) s += b[k * d1 + 1 + j] * xs(i, j);
                sc[k] = s;
            }
            sc[K - 1] = 0.0;
        };
        auto objective = [&](const std::vector<double>& b) {
            double obj = 0.0;
            std::vector<double> sc(K);
            for (std::size_t i = 0; i < n; ++i) {
                row_scores(i, b, sc);
                const double lse = log_sum_exp(sc);
                for (std::size_t k = 0; k < K; ++k)
                    if (weights(i, k) > 0.0) obj += weights(i, k) * (sc[k] - lse);
            }
            obj -= cfg.ridge * penalty_of(b, d1);
            return obj;
        };

        double obj = objective(beta);
        std::vector<double> sc(K), prob(K);
        for (int it = 0; it < cfg.max_iter; ++it) {
            std::vector<double> grad(nfree, 0.0);
            Matrix hess(nfree, nfree, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                row_scores(i, beta, sc);
                const double lse = log_sum_exp(sc);
                for (std::size_t k = 0; k < K; ++k) prob[k] = std::exp(sc[k] - lse);
                for (std::size_t k = 0; k + 1 < K; ++k) {
                    const double gk = weights(i, k) - prob[k];
                    grad[k * d1] += gk;
                    for (std::size_t j = 0; j + 1 < d1; ++j) grad[k * d1 + 1 + j] += gk * xs(i, j);
                    for (std::size_t l = 0; l + 1 < K; ++l) {
                        const double hkl = prob[k] * ((k == l ? 1.0 : 0.0) - prob[l]);
                        if (hkl == 0.0) continue;
                        // negated Hessian blocks (so the system is PD)
                        for (std::size_t a = 0; a < d1; ++a) {
                            const double xa = (a == 0) ? 1.0 : xs(i, a - 1);
                            for (std::size_t c = 0; c < d1; ++c) {
                                const double xc = (c == 0) ? 1.0 : xs(i, c - 1);
                                hess(k * d1 + a, l * d1 + c) += hkl * xa * xc;
                            }
                        }
                    }
                }
            }
            double gnorm = 0.0;
            for (std::size_t t = 0; t < nfree; ++t) {
                if (t % d1 != 0) {  // ridge excludes intercepts
                    grad[t] -= 2.0 * cfg.ridge * beta[t];
                    hess(t, t) += 2.0 * cfg.ridge;
                }
                hess(t, t) += 1e-10;
                gnorm = std::max(gnorm, std::fabs(grad[t]));
            }
            if (gnorm < cfg.grad_tol) break;
            std::vector<double> step;
            try {
                step = cholesky_solve(hess, grad);
            } catch (const std::exception&) {
                break;  // keep current beta; ridge normally prevents this
            }
            double t = 1.0;
            bool improved = false;
            for (int ls = 0; ls < 30; ++ls) {
                std::vector<double> cand = beta;
                for (std::size_t u = 0; u < nfree; ++u) cand[u] += t * step[u];
                const double cobj = objective(cand);
                if (std::isfinite(cobj) && cobj >= obj - 1e-14) {
                    improved = cobj > obj;
                    beta = std::move(cand);
                    obj = cobj;
                    break;
                }
                t *= 0.5;
            }
            if (!improved && gnorm < 1e-6) break;
            if (t < 1e-8) break;
        }
        model->beta_ = std::move(beta);
        model->obj_ = obj;
        return model;
    }

    Matrix predict_proba(const Matrix& features) const override {
        const Matrix xs = std_.apply(features);
        const std::size_t n = xs.rows(), d1 = xs.cols() + 1;
        Matrix out(n, K_);
        std::vector<double> sc(K_);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k + 1 < K_; ++k) {
                double s = beta_[k * d1];
                for (std::size_t j = 0; j + 1 < d1; ++j) s += beta_[k * d1 + 1 + j] * xs(i, j);
                sc[k] = s;
            }
            sc[K_ - 1] = 0.0;
            const double lse = log_sum_exp(sc);
            for (std::size_t k = 0; k < K_; ++k) out(i, k) = std::exp(sc[k] - lse);
        }
        return out;
    }

    int param_count() const override { return static_cast<int>(beta_.size()); }
    double penalty() const override {
        const std::size_t d1 = beta_.size() / (K_ - 1);
        return cfg_.ridge * penalty_of(beta_, d1);
    }
    std::string name() const override { return "logit"; }

private:
    static double penalty_of(const std::vector<double>& b, std::size_t d1) {
        double s = 0.0;
        for (std::size_t t = 0; t < b.size(); ++t)
            if (t % d1 != 0) s += b[t] * b[t];
        return s;
    }
    std::size_t K_ = 2;
    std::vector<double> beta_;
    Standardizer std_;
    LogitConfig cfg_;
    double obj_ = 0.0;
};

struct NetConfig {
    double ridge = 1e-4;
    int max_epochs = 400;
    double lr = 0.05;
    double momentum = 0.9;
    double plateau_tol = 1e-8;
    int plateau_window = 25;
    std::uint64_t seed = 0;
};

/// One-hidden-layer network: tanh hidden units, softmax output with class K
/// as reference and no bias terms, so the parameter count is (d + K - 1) h.
/// Trained by full-batch gradient ascent with momentum; steps that do not
/// improve the penalized objective are rejected and the learning rate halved,
/// so the recorded objective path is non-decreasing.
class ShallowNet : public ClassifierModel {
public:
    struct Params {
        std::size_t d = 0, h = 0, K = 0;
        std::vector<double> w1;  // h x d
        std::vector<double> w2;  // (K-1) x h
    };

    static std::shared_ptr<ShallowNet> fit(const Matrix& features, const Matrix& weights,
                                           int hidden, const NetConfig& cfg = {},
                                           const ShallowNet* warm = nullptr) {
        const std::size_t n = weights.rows(), K = weights.cols();
        const std::size_t d = features.cols(), h = static_cast<std::size_t>(hidden);
        if (hidden < 1) throw std::invalid_argument("fit_shallow_net: hidden >= 1");
        if (K < 2) throw std::invalid_argument("fit_shallow_net: K >= 2");

        auto model = std::make_shared<ShallowNet>();
        model->std_ = Standardizer::fit(features);
        model->cfg_ = cfg;
        const Matrix xs = model->std_.apply(features);

        Params p;
        p.d = d; p.h = h; p.K = K;
        if (warm && warm->p_.d == d && warm->p_.h == h && warm->p_.K == K) {
            p = warm->p_;
        } else {
            Rng rng(cfg.seed ^ 0x5e77ULL);
            p.w1.resize(h * d);
            for (auto& w : p.w1) w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
            p.w2.assign((K - 1) * h, 0.0);  // start at uniform probabilities
        }

        double obj = objective(xs, weights, p, cfg.ridge);
        std::vector<double> grad, vel(p.w1.size() + p.w2.size(), 0.0);
        double lr = cfg.lr;
        int flat = 0;
        model->path_.push_back(obj);
        for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            gradient(xs, weights, p, cfg.ridge, grad);
            bool finite = true;
            for (double g : grad) finite = finite && std::isfinite(g);
            if (!finite) {
                lr *= 0.5;
                std::fill(vel.begin(), vel.end(), 0.0);
                if (lr < 1e-12) break;
                continue;
            }
            Params cand = p;
            for (std::size_t t = 0; t < grad.size(); ++t) {
                vel[t] = cfg.momentum * vel[t] + lr * grad[t];
                if (t < p.w1.size()) cand.w1[t] += vel[t];
                else cand.w2[t - p.w1.size()] += vel[t];
            }
            const double cobj = objective(xs, weights, cand, cfg.ridge);
            if (std::isfinite(cobj) && cobj >= obj - 1e-14) {
                const double gain = cobj - obj;
                p = std::move(cand);
                obj = cobj;
                model->path_.push_back(obj);
                lr = std::min(lr * 1.05, 1.0);
                flat = (gain < cfg.plateau_tol * (1.0 + std::fabs(obj))) ? flat + 1 : 0;
                if (flat >= cfg.plateau_window) break;
            } else {
                lr *= 0.5;
                std::fill(vel.begin(), vel.end(), 0.0);
                if (lr < 1e-12) break;
            }
        }
        model->p_ = std::move(p);
        model->obj_ = obj;
        return model;
    }

    Matrix predict_proba(const Matrix& features) const override {
        const Matrix xs = std_.apply(features);
        Matrix out(xs.rows(), p_.K);
        std::vector<double> hid(p_.h), sc(p_.K);
        for (std::size_t i = 0; i < xs.rows(); ++i) {
            forward(xs.row(i), p_, hid, sc);
            const double lse = log_sum_exp(sc);
            for (std::size_t k = 0; k < p_.K; ++k) out(i, k) = std::exp(sc[k] - lse);
        }
        return out;
    }

    int param_count() const override {
        return static_cast<int>((p_.d + p_.K - 1) * p_.h);
    }
    double penalty() const override {
        double s = 0.0;
        for (double w : p_.w1) s += w * w;
        for (double w : p_.w2) s += w * w;
        return cfg_.ridge * s;
    }
    std::string name() const override { return "nnet"; }
    const std::vector<double>& objective_path() const { return path_; }
    const Params& params() const { return p_; }

    /// Penalized objective and its analytic gradient on standardized features,
    /// exposed for finite-difference checks.
    static double objective(const Matrix& xs, const Matrix& weights, const Params& p,
                            double ridge) {
        const std::size_t n = xs.rows();
        std::vector<double> hid(p.h), sc(p.K);
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            forward(xs.row(i), p, hid, sc);
            const double lse = log_sum_exp(sc);
            for (std::size_t k = 0; k < p.K; ++k)
                if (weights(i, k) > 0.0) obj += weights(i, k) * (sc[k] - lse);
        }
        double pen = 0.0;
        for (double w : p.w1) pen += w * w;
        for (double w : p.w2) pen += w * w;
        return obj - ridge * pen;
    }

    static void gradient(const Matrix& xs, const Matrix& weights, const Params& p, double ridge,
                         std::vector<double>& grad) {
        const std::size_t n = xs.rows();
        grad.assign(p.w1.size() + p.w2.size(), 0.0);
        std::vector<double> hid(p.h), sc(p.K), prob(p.K), dsc(p.K), dhid(p.h);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = xs.row(i);
            forward(x, p, hid, sc);
            const double lse = log_sum_exp(sc);
            for (std::size_t k = 0; k < p.K; ++k) prob[k] = std::exp(sc[k] - lse);
            for (std::size_t k = 0; k < p.K; ++k) dsc[k] = weights(i, k) - prob[k];
            for (std::size_t j = 0; j < p.h; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k + 1 < p.K; ++k) {
                    s += dsc[k] * p.w2[k * p.h + j];
                    grad[p.w1.size() + k * p.h + j] += dsc[k] * hid[j];
                }
                dhid[j] = s * (1.0 - hid[j] * hid[j]);  // tanh'
            }
            for (std::size_t j = 0; j < p.h; ++j)
                for (std::size_t a = 0; a < p.d; ++a) grad[j * p.d + a] += dhid[j] * x[a];
        }
        for (std::size_t t = 0; t < p.w1.size(); ++t) grad[t] -= 2.0 * ridge * p.w1[t];
        for (std::size_t t = 0; t < p.w2.size(); ++t)
            grad[p.w1.size() + t] -= 2.0 * ridge * p.w2[t];
    }

private:
    static void forward(std::span<const double> x, const Params& p, std::vector<double>& hid,
                        std::vector<double>& sc) {
        for (std::size_t j = 0; j < p.h; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < p.d; ++a) s += p.w1[j * p.d + a] * x[a];
            hid[j] = std::tanh(s);
        }
        for (std::size_t k = 0; k + 1 < p.K; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < p.h; ++j) s += p.w2[k * p.h + j] * hid[j];
            sc[k] = s;
        }
        sc[p.K - 1] = 0.0;
    }

    Params p_;
    Standardizer std_;
    NetConfig cfg_;
    double obj_ = 0.0;
    std::vector<double> path_;
};

inline ClassifierPtr fit_intercept_only(const Matrix& weights) {
    return InterceptOnlyModel::fit(weights);
}

inline ClassifierPtr fit_multinomial_logit(const Matrix& features, const Matrix& weights,
                                           const LogitConfig& cfg = {},
                                           const ClassifierModel* warm = nullptr) {
    return MultinomialLogit::fit(features, weights, cfg,
                                 dynamic_cast<const MultinomialLogit*>(warm));
}

inline ClassifierPtr fit_shallow_net(const Matrix& features, const Matrix& weights, int hidden,
                                     const NetConfig& cfg = {},
                                     const ClassifierModel* warm = nullptr) {
    return ShallowNet::fit(features, weights, hidden, cfg, dynamic_cast<const ShallowNet*>(warm));
}

}  // namespace adaptg
