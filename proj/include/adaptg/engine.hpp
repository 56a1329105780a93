#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaptg/masking.hpp"
#include "adaptg/records.hpp"

namespace adaptg {

/// FDP estimate (1 + A) / (zeta * R); +infinity when R = 0.
inline double fdp_hat(long a, long r, double zeta) {
    if (a < 0 || r < 0) throw std::invalid_argument("fdp_hat: negative count");
    if (r == 0) return std::numeric_limits<double>::infinity();
    return (1.0 + static_cast<double>(a)) / (zeta * static_cast<double>(r));
}

/// Argmax index of (index, score) pairs; ties broken by lowest index.
inline int reveal_by_score(std::span<const std::pair<int, double>> scores) {
    if (scores.empty()) throw std::invalid_argument("reveal_by_score: empty");
    int best = scores.front().first;
    double best_score = scores.front().second;
    for (const auto& [idx, s] : scores) {
        if (s > best_score || (s == best_score && idx < best)) {
            best = idx;
            best_score = s;
        }
    }
    return best;
}

/// Per-hypothesis masking state for one run.
struct MaskState {
    std::vector<double> m;         // masked values g(p_i)
    std::vector<std::uint8_t> maskable;
    std::vector<std::uint8_t> bits;      // true b_i; hidden from policies while masked
    std::vector<std::uint8_t> in_masked_set;
    std::vector<int> sign_info;    // s_i = sgn(z_i) * (-1)^{b_i} for point-null models
    long a_count = 0;
    long r_count = 0;
    int step = 0;
};

inline MaskState make_mask_state(const PreparedData& data, const MaskingParams& params) {
    params.validate();
    const std::size_t n = data.size();
    MaskState st;
    st.m.resize(n);
    st.maskable.resize(n);
    st.bits.resize(n);
    st.in_masked_set.resize(n);
    st.sign_info.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const MaskedValue mv = mask(data.p[i], params);
        st.m[i] = mv.m;
        st.maskable[i] = mv.is_maskable ? 1 : 0;
        const bool blue = mv.is_maskable && data.p[i] >= params.lambda;
        st.bits[i] = blue ? 1 : 0;
        st.in_masked_set[i] = st.maskable[i];
        if (mv.is_maskable) {
            if (blue) ++st.a_count; else ++st.r_count;
        }
        if (data.model_null.is_point() && data.sgn_z[i] != 0)
            st.sign_info[i] = data.sgn_z[i] * (st.bits[i] ? -1 : 1);
    }
    return st;
}

/// The analyst-visible snapshot handed to reveal policies. It carries the
/// covariates, masked values, revealed bits, and the running counts -- never
/// the p-values or bits of currently masked hypotheses.
class PolicyView {
public:
    std::size_t size() const { return m_->size(); }
    const Matrix& covariates() const { return *covariates_; }
    double masked_value(int i) const { return (*m_)[static_cast<std::size_t>(i)]; }
    bool is_maskable(int i) const { return (*maskable_)[static_cast<std::size_t>(i)] != 0; }
    bool is_masked(int i) const { return (*in_set_)[static_cast<std::size_t>(i)] != 0; }
    int point_sign(int i) const { return (*sign_)[static_cast<std::size_t>(i)]; }
    double null_delta(int i) const {
        return delta_->empty() ? 0.0 : (*delta_)[static_cast<std::size_t>(i)];
    }
    NullType model_null() const { return model_null_; }
    const MaskingParams& masking() const { return *params_; }

    /// Bit b_i, available only once hypothesis i has been revealed.
    std::optional<int> revealed_bit(int i) const {
        if (is_masked(i)) return std::nullopt;
        return static_cast<int>((*bits_)[static_cast<std::size_t>(i)]);
    }
    /// p_i reconstructed from (m_i, b_i); available only once revealed.
    std::optional<double> revealed_p(int i) const {
        const auto b = revealed_bit(i);
        if (!b) return std::nullopt;
        const auto cands = unmask_candidates({masked_value(i), is_maskable(i)}, *params_);
        for (const auto& c : cands)
            if (c.b == *b) return c.p;
        return std::nullopt;
    }

    std::span<const int> masked_indices() const { return masked_indices_; }
    long a_count() const { return a_; }
    long r_count() const { return r_; }
    int step() const { return step_; }
    std::size_t batch_cap() const { return batch_cap_; }

private:
    friend struct RunDriver;
    const Matrix* covariates_ = nullptr;
    const std::vector<double>* m_ = nullptr;
    const std::vector<std::uint8_t>* maskable_ = nullptr;
    const std::vector<std::uint8_t>* in_set_ = nullptr;
    const std::vector<std::uint8_t>* bits_ = nullptr;
    const std::vector<int>* sign_ = nullptr;
    const std::vector<double>* delta_ = nullptr;
    const MaskingParams* params_ = nullptr;
    NullType model_null_;
    std::span<const int> masked_indices_;
    long a_ = 0, r_ = 0;
    int step_ = 0;
    std::size_t batch_cap_ = 1;
};

/// Chooses which masked hypotheses to reveal next, given only the analyst view.
class RevealPolicy {
public:
    virtual ~RevealPolicy() = default;
    virtual std::vector<int> choose(const PolicyView& view) = 0;
    /// Optional free-form note recorded in the trace for the step just chosen.
    virtual std::string last_note() const { return {}; }
};

struct TraceRow {
    int step = 0;
    std::size_t masked = 0;
    long a_count = 0;
    long r_count = 0;
    double fdp = 0.0;
    std::string note;
};

struct RunResult {
    std::vector<int> rejected;
    std::vector<TraceRow> trace;
    std::optional<int> stop_step;  // empty iff no rejections
    bool no_rejections() const { return !stop_step.has_value(); }
};

struct RunOptions {
    std::optional<std::size_t> batch_cap;  // default max(1, |M_0|/50)
    bool keep_trace = true;
};

struct RunDriver {
    static PolicyView make_view(const PreparedData& data, const MaskState& st,
                                const MaskingParams& params, std::span<const int> masked_idx,
                                std::size_t batch_cap) {
        PolicyView v;
        v.covariates_ = &data.covariates;
        v.m_ = &st.m;
        v.maskable_ = &st.maskable;
        v.in_set_ = &st.in_masked_set;
        v.bits_ = &st.bits;
        v.sign_ = &st.sign_info;
        v.delta_ = &data.delta_std;
        v.params_ = &params;
        v.model_null_ = data.model_null;
        v.masked_indices_ = masked_idx;
        v.a_ = st.a_count;
        v.r_ = st.r_count;
        v.step_ = st.step;
        v.batch_cap_ = batch_cap;
        return v;
    }
};

/// The AdaPT_g reveal loop. Initializes the masking set to every maskable
/// hypothesis, then alternates the stopping check FDP-hat <= alpha with policy
/// reveals until it stops or the masking set empties.
inline RunResult run(const PreparedData& data, const MaskingParams& params, double alpha,
                     RevealPolicy& policy, const RunOptions& opts = {}) {
    if (data.size() == 0) throw std::invalid_argument("run: no records");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("run: alpha in (0,1)");
    const double zeta = params.zeta();

    MaskState st = make_mask_state(data, params);
    std::vector<int> masked_idx;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (st.in_masked_set[i]) masked_idx.push_back(static_cast<int>(i));

    const std::size_t batch_cap =
        opts.batch_cap.value_or(std::max<std::size_t>(1, masked_idx.size() / 50));
    if (batch_cap == 0) throw std::invalid_argument("run: batch cap must be >= 1");

    RunResult res;
    auto stop_now = [&](double fdp) { return fdp <= alpha; };
    auto finish = [&]() {
        res.stop_step = st.step;
        for (int i : masked_idx)
            if (st.bits[static_cast<std::size_t>(i)] == 0) res.rejected.push_back(i);
        std::sort(res.rejected.begin(), res.rejected.end());
    };

    double fdp = fdp_hat(st.a_count, st.r_count, zeta);
    if (opts.keep_trace)
        res.trace.push_back({st.step, masked_idx.size(), st.a_count, st.r_count, fdp, {}});
    if (stop_now(fdp)) {
        finish();
        return res;
    }

    while (!masked_idx.empty()) {
        const PolicyView view = RunDriver::make_view(data, st, params, masked_idx, batch_cap);
        const std::vector<int> batch = policy.choose(view);
        const std::string note = policy.last_note();

        if (batch.empty()) throw std::runtime_error("reveal policy returned an empty batch");
        if (batch.size() > batch_cap) throw std::runtime_error("reveal policy exceeded batch cap");
        std::vector<std::uint8_t> seen(data.size(), 0);
        for (int i : batch) {
            if (i < 0 || static_cast<std::size_t>(i) >= data.size() ||
                !st.in_masked_set[static_cast<std::size_t>(i)] ||
                seen[static_cast<std::size_t>(i)])
                throw std::runtime_error("reveal policy chose an index outside the masked set");
            seen[static_cast<std::size_t>(i)] = 1;
        }

        // Reveal one hypothesis at a time: the stopping rule only needs the
        // public counts, so it is checked after every reveal even though the
        // working model refits once per batch.
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const int i = batch[bi];
            st.in_masked_set[static_cast<std::size_t>(i)] = 0;
            if (st.bits[static_cast<std::size_t>(i)]) --st.a_count; else --st.r_count;
            std::erase(masked_idx, i);
            ++st.step;
            fdp = fdp_hat(st.a_count, st.r_count, zeta);
            if (opts.keep_trace)
                res.trace.push_back({st.step, masked_idx.size(), st.a_count, st.r_count, fdp,
                                     bi == 0 ? note : std::string{}});
            if (stop_now(fdp)) {
                finish();
                return res;
            }
        }
    }
    return res;  // exhausted: no rejections
}

/// Fixed policy that reveals in descending order of externally supplied
/// scores (lowest index first on ties).
class FixedOrderPolicy : public RevealPolicy {
public:
    explicit FixedOrderPolicy(std::vector<std::pair<int, double>> scores) {
        std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        order_.reserve(scores.size());
        for (const auto& [idx, s] : scores) order_.push_back(idx);
    }

    std::vector<int> choose(const PolicyView& view) override {
        std::vector<int> batch;
        for (int i : order_) {
            if (!view.is_masked(i)) continue;
            batch.push_back(i);
            if (batch.size() >= view.batch_cap()) break;
        }
        return batch;
    }

private:
    std::vector<int> order_;
};

/// Index-order policy; the all-ties baseline.
class IndexOrderPolicy : public RevealPolicy {
public:
    std::vector<int> choose(const PolicyView& view) override {
        auto masked = view.masked_indices();
        const std::size_t take = std::min(view.batch_cap(), masked.size());
        return {masked.begin(), masked.begin() + static_cast<std::ptrdiff_t>(take)};
    }
};

/// Oracle reveal policy: computes the exact blue probability
/// q_i = P[b_i = 1 | x_i, m_i] under a known generative model and reveals in
/// descending q_i, the fixed order that is optimal among all adaptive
/// strategies. `log_density` must return the log density of the model-space z
/// given the covariate row.
template <typename LogDensityZ>
class OracleRevealPolicy : public RevealPolicy {
public:
    explicit OracleRevealPolicy(LogDensityZ log_density) : logf_(std::move(log_density)) {}

    std::vector<int> choose(const PolicyView& view) override {
        if (!inner_) {
            std::vector<std::pair<int, double>> scores;
            for (int i : view.masked_indices()) scores.emplace_back(i, oracle_q(view, i));
            inner_ = std::make_unique<FixedOrderPolicy>(std::move(scores));
        }
        return inner_->choose(view);
    }

    double oracle_q(const PolicyView& view, int i) const {
        NullType null = view.model_null();
        if (null.is_interval()) null = NullType::interval(view.null_delta(i));
        const MaskedValue mv{view.masked_value(i), view.is_maskable(i)};
        std::optional<int> side;
        if (null.is_point()) side = view.point_sign(i);
        double num = 0.0, den = 0.0;
        for (const ZCandidate& c : z_candidates(mv, 1.0, null, side, view.masking())) {
            const double v = std::exp(logf_(view.covariates().row(i), c.z) -
                                      log_p_value_slope(c.z, 1.0, null)) *
                             (c.b == 1 ? view.masking().zeta() : 1.0);
            den += v;
            if (c.b == 1) num += v;
        }
        return den > 0.0 ? num / den : view.masking().zeta() / (1.0 + view.masking().zeta());
    }

private:
    LogDensityZ logf_;
    std::unique_ptr<FixedOrderPolicy> inner_;
};

template <typename LogDensityZ>
OracleRevealPolicy<LogDensityZ> make_oracle_policy(LogDensityZ logf) {
    return OracleRevealPolicy<LogDensityZ>(std::move(logf));
}

}  // namespace adaptg
