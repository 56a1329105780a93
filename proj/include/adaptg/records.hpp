#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/masking.hpp"
#include "adaptg/mathutil.hpp"

namespace adaptg {

/// One hypothesis test: covariates plus a p-value and/or a z-value with
/// standard error.
struct HypothesisRecord {
    std::string id;
    std::vector<double> x;
    std::optional<double> p;
    std::optional<double> z;
    std::optional<double> se;
};

/// Analyst-facing arrays derived from the raw records. When z and se are
/// available the working model runs on standardized z' = z/se with unit
/// variance, se^2 appended as a covariate, and (for interval nulls) a
/// per-record standardized half-width delta/se. When only p-values are given
/// they are mapped to right-tailed z-values with unit variance.
struct PreparedData {
    std::vector<std::string> ids;
    Matrix covariates;             // n x d
    std::vector<double> p;         // true p-values (clamped); hidden from policies
    std::vector<double> z_raw;     // observed z (NaN in p-only mode)
    std::vector<int> sgn_z;        // sign of the observed z (+1/-1), 0 when unknown
    std::vector<double> delta_std; // per-record model-space interval half-width
    NullType test_null;            // the null the p-values test
    NullType model_null;           // null type used for z reconstruction (sigma = 1)

    std::size_t size() const { return p.size(); }
};

struct PrepareOptions {
    bool append_se2_covariate = true;
};

inline PreparedData prepare_data(const std::vector<HypothesisRecord>& records, NullType null,
                                 const PrepareOptions& opts = {}) {
    if (records.empty()) throw std::invalid_argument("prepare_data: no records");
    const std::size_t n = records.size();

    bool all_z = true, any_z = false;
    for (const auto& r : records) {
        if (r.z.has_value()) any_z = true; else all_z = false;
        if (!r.z.has_value() && !r.p.has_value())
            throw std::invalid_argument("record '" + r.id + "': needs p or z");
        if (r.se.has_value() && !(*r.se > 0.0))
            throw std::invalid_argument("record '" + r.id + "': se must be > 0");
    }
    const bool z_mode = all_z;
    if (!z_mode && any_z)
        throw std::invalid_argument("prepare_data: mixed p-only and z records");
    if (!z_mode && null.is_interval())
        throw std::invalid_argument("prepare_data: interval null requires z and se");

    const std::size_t d_raw = records.front().x.size();
    for (const auto& r : records)
        if (r.x.size() != d_raw)
            throw std::invalid_argument("record '" + r.id + "': inconsistent covariate count");

    const bool add_se2 = z_mode && opts.append_se2_covariate;
    PreparedData out;
    out.ids.reserve(n);
    out.covariates = Matrix(n, d_raw + (add_se2 ? 1 : 0));
    out.p.resize(n);
    out.z_raw.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.sgn_z.assign(n, 0);
    out.delta_std.assign(n, 0.0);
    out.test_null = null;
    out.model_null = z_mode ? null : NullType::one_sided_right();

    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = records[i];
        out.ids.push_back(r.id.empty() ? std::to_string(i) : r.id);
        for (std::size_t j = 0; j < d_raw; ++j) out.covariates(i, j) = r.x[j];
        if (z_mode) {
            const double se = r.se.value_or(1.0);
            if (add_se2) out.covariates(i, d_raw) = se * se;
            out.p[i] = clamp_p(p_value(*r.z, se, null));
            out.z_raw[i] = *r.z;
            out.sgn_z[i] = (*r.z >= 0.0) ? 1 : -1;
            if (null.is_interval()) out.delta_std[i] = null.delta / se;
        } else {
            if (!(*r.p >= 0.0 && *r.p <= 1.0))
                throw std::invalid_argument("record '" + r.id + "': p outside [0,1]");
            out.p[i] = clamp_p(*r.p);
        }
    }
    return out;
}

}  // namespace adaptg
