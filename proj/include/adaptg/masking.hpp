#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/mathutil.hpp"

namespace adaptg {

enum class MaskShape { Tent, Comb };

/// Null hypothesis being tested for each z ~ N(theta, sigma^2):
/// one-sided theta <= 0 (or >= 0), point theta = 0, or interval |theta| <= delta.
struct NullType {
    enum class Kind { OneSidedRight, OneSidedLeft, Point, Interval };

    Kind kind = Kind::OneSidedRight;
    double delta = 0.0;  // interval half-width, in the units of theta (z scale)

    static NullType one_sided_right() { return {Kind::OneSidedRight, 0.0}; }
    static NullType one_sided_left() { return {Kind::OneSidedLeft, 0.0}; }
    static NullType point() { return {Kind::Point, 0.0}; }
    static NullType interval(double delta) {
        if (delta < 0.0) throw std::invalid_argument("interval null: delta must be >= 0");
        return {Kind::Interval, delta};
    }

    bool is_interval() const { return kind == Kind::Interval; }
    bool is_point() const { return kind == Kind::Point; }
    bool is_one_sided() const {
        return kind == Kind::OneSidedRight || kind == Kind::OneSidedLeft;
    }

    std::string name() const {
        switch (kind) {
            case Kind::OneSidedRight: return "one-sided-right";
            case Kind::OneSidedLeft: return "one-sided-left";
            case Kind::Point: return "point";
            case Kind::Interval: return "interval:" + std::to_string(delta);
        }
        return "?";
    }
};

/// Masking function family: maps the blue mirror region [lambda, nu] onto the
/// red rejection region [0, alpha_m]. Requires 0 < alpha_m <= lambda < nu <= 1.
struct MaskingParams {
    double alpha_m = 0.5;
    double lambda = 0.5;
    double nu = 1.0;
    MaskShape shape = MaskShape::Tent;

    MaskingParams() = default;
    MaskingParams(double alpha_m_, double lambda_, double nu_, MaskShape shape_ = MaskShape::Tent)
        : alpha_m(alpha_m_), lambda(lambda_), nu(nu_), shape(shape_) {
        validate();
    }

    void validate() const {
        if (!(alpha_m > 0.0 && alpha_m <= lambda && lambda < nu && nu <= 1.0))
            throw std::invalid_argument("MaskingParams: need 0 < alpha_m <= lambda < nu <= 1");
    }

    /// Stretch factor: ratio of blue to red region widths. Always derived.
    double zeta() const { return (nu - lambda) / alpha_m; }

    /// Symmetric masking g(p) = min(p, 1-p), the original AdaPT special case.
    static MaskingParams symmetric() { return MaskingParams(0.5, 0.5, 1.0, MaskShape::Tent); }
};

struct MaskedValue {
    double m = 0.0;
    bool is_maskable = false;
};

/// Minimum nonzero rejection count at level alpha under stretch factor zeta.
inline long r_min(double zeta, double alpha) {
    return static_cast<long>(std::ceil(1.0 / (zeta * alpha) - 1e-9));
}

/// Default masking parameters: nu = 0.9, alpha_m = lambda = nu/(zeta+1) with
/// zeta = max{2, min{1/alpha, 300/(n alpha)}}. Tent shape except for interval
/// nulls, which default to the comb shape.
inline MaskingParams default_params(std::size_t n, double alpha,
                                    NullType null = NullType::one_sided_right(),
                                    std::optional<double> nu_override = std::nullopt) {
    if (n < 1) throw std::invalid_argument("default_params: n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("default_params: alpha in (0,1)");
    const double nd = static_cast<double>(n);
    const double zeta = std::max(2.0, std::min(1.0 / alpha, 300.0 / (nd * alpha)));
    const double nu = nu_override.value_or(0.9);
    const double am = nu / (zeta + 1.0);
    const MaskShape shape = null.is_interval() ? MaskShape::Comb : MaskShape::Tent;
    return MaskingParams(am, am, nu, shape);
}

/// g(p): the masked value together with maskability. p in the blue region
/// [lambda, nu] maps to (nu-p)/zeta (tent) or (p-lambda)/zeta (comb); all other
/// p map to themselves. Maskable iff p lies in [0, alpha_m] or [lambda, nu].
inline MaskedValue mask(double p, const MaskingParams& params) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("mask: p outside [0,1]");
    p = clamp_p(p);
    const bool blue = (p >= params.lambda && p <= params.nu);
    const bool red = (p <= params.alpha_m);
    if (blue) {
        const double m = (params.shape == MaskShape::Tent) ? (params.nu - p) / params.zeta()
                                                           : (p - params.lambda) / params.zeta();
        return {m, true};
    }
    return {p, red};
}

struct PCandidate {
    int b = 0;       // 1 iff p lies in the blue mirror region
    double p = 0.0;  // implied p-value
};

/// Candidate p-values consistent with an observed masked value. For maskable m
/// the two candidates are p_0 = m and p_1 = nu - zeta*m (tent) or
/// lambda + zeta*m (comb); otherwise only (0, m).
inline std::vector<PCandidate> unmask_candidates(const MaskedValue& mv,
                                                 const MaskingParams& params) {
    if (!mv.is_maskable) return {{0, mv.m}};
    if (!(mv.m >= 0.0 && mv.m <= params.alpha_m + 1e-12))
        throw std::invalid_argument("unmask_candidates: maskable m outside [0, alpha_m]");
    const double p1 = (params.shape == MaskShape::Tent) ? params.nu - params.zeta() * mv.m
                                                        : params.lambda + params.zeta() * mv.m;
    return {{0, mv.m}, {1, p1}};
}

/// p-value transform for z ~ N(theta, sigma^2) under the given null.
inline double p_value(double z, double sigma, NullType null) {
    if (!(sigma > 0.0)) throw std::invalid_argument("p_value: sigma must be > 0");
    const double u = z / sigma;
    switch (null.kind) {
        case NullType::Kind::OneSidedRight: return std::clamp(1.0 - norm_cdf(u), 0.0, 1.0);
        case NullType::Kind::OneSidedLeft: return std::clamp(1.0 - norm_cdf(-u), 0.0, 1.0);
        case NullType::Kind::Point:
            return std::clamp(2.0 * (1.0 - norm_cdf(std::fabs(u))), 0.0, 1.0);
        case NullType::Kind::Interval: {
            const double d = null.delta / sigma;
            const double a = std::fabs(u);
            return std::clamp(1.0 - norm_cdf(a + d) + norm_cdf(-a + d), 0.0, 1.0);
        }
    }
    return 1.0;
}

/// |dp/dz| of the transform above, expressed with N(0, sigma^2) densities on
/// the z scale. This is the Jacobian denominator in the E-step weights.
inline double p_value_slope(double z, double sigma, NullType null) {
    switch (null.kind) {
        case NullType::Kind::OneSidedRight:
        case NullType::Kind::OneSidedLeft:
            return norm_pdf(z, 0.0, sigma * sigma);
        case NullType::Kind::Point:
            return 2.0 * norm_pdf(std::fabs(z), 0.0, sigma * sigma);
        case NullType::Kind::Interval: {
            const double a = std::fabs(z);
            const double s2 = sigma * sigma;
            return norm_pdf(a + null.delta, 0.0, s2) + norm_pdf(null.delta - a, 0.0, s2);
        }
    }
    return 0.0;
}

inline double log_p_value_slope(double z, double sigma, NullType null) {
    switch (null.kind) {
        case NullType::Kind::OneSidedRight:
        case NullType::Kind::OneSidedLeft:
            return log_norm_pdf(z, 0.0, sigma * sigma);
        case NullType::Kind::Point:
            return std::log(2.0) + log_norm_pdf(std::fabs(z), 0.0, sigma * sigma);
        case NullType::Kind::Interval: {
            const double a = std::fabs(z);
            const double s2 = sigma * sigma;
            return log_add_exp(log_norm_pdf(a + null.delta, 0.0, s2),
                               log_norm_pdf(null.delta - a, 0.0, s2));
        }
    }
    return -std::numeric_limits<double>::infinity();
}

/// Solve the interval-null transform p(|z|) = target for |z|, given
/// d = delta/sigma on the standardized scale. Strictly decreasing on [0, 40];
/// safeguarded Newton, converges to |p(z) - target| < 1e-12.
inline double invert_interval_absu(double target, double d) {
    if (!(target > 0.0 && target <= 1.0))
        throw std::invalid_argument("invert_interval_absu: target outside (0,1]");
    auto f = [&](double u) { return 1.0 - norm_cdf(u + d) + norm_cdf(-u + d); };
    double lo = 0.0, hi = 40.0;
    if (target >= f(lo)) return 0.0;  // p attains its maximum 1 at |z| = 0
    if (target <= f(hi)) return hi;
    double u = std::min(std::max(norm_quantile_comp(target / 2.0) + d, lo), hi);
    for (int it = 0; it < 200; ++it) {
        const double val = f(u) - target;
        if (std::fabs(val) < 1e-12) return u;
        if (val > 0.0) lo = u; else hi = u;
        const double slope = norm_pdf(u + d) + norm_pdf(d - u);  // = -f'(u)
        double next = (slope > 0.0) ? u + val / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        u = next;
    }
    if (std::fabs(f(u) - target) < 1e-10) return u;
    throw std::runtime_error("invert_interval_absu: root finder did not converge");
}

struct ZCandidate {
    int b = 0;        // blue-region bit
    int b_prime = -1; // sign(z) > 0 indicator for interval nulls, -1 otherwise
    double z = 0.0;
};

/// z-values consistent with a masked value under the given null type.
/// One-sided nulls give one z per p-candidate; point nulls use the revealed
/// sign information s = sgn(z) * (-1)^b to keep one z per candidate; interval
/// nulls retain all four (b, sign) options.
inline std::vector<ZCandidate> z_candidates(const MaskedValue& mv, double sigma, NullType null,
                                            std::optional<int> side_info,
                                            const MaskingParams& params) {
    if (!(sigma > 0.0)) throw std::invalid_argument("z_candidates: sigma must be > 0");
    if (null.is_point() && !side_info.has_value())
        throw std::invalid_argument("z_candidates: point null requires side_info");
    std::vector<ZCandidate> out;
    for (const PCandidate& pc : unmask_candidates(mv, params)) {
        const double p = clamp_p(pc.p);
        switch (null.kind) {
            case NullType::Kind::OneSidedRight:
                out.push_back({pc.b, -1, sigma * norm_quantile_comp(p)});
                break;
            case NullType::Kind::OneSidedLeft:
                out.push_back({pc.b, -1, -sigma * norm_quantile_comp(p)});
                break;
            case NullType::Kind::Point: {
                const double absz = sigma * norm_quantile_comp(p / 2.0);
                const int sgn = (*side_info) * ((pc.b == 1) ? -1 : 1);
                out.push_back({pc.b, -1, sgn * absz});
                break;
            }
            case NullType::Kind::Interval: {
                const double absz = sigma * invert_interval_absu(p, null.delta / sigma);
                out.push_back({pc.b, 0, -absz});
                out.push_back({pc.b, 1, absz});
                break;
            }
        }
    }
    return out;
}

}  // namespace adaptg
