#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace adaptg {

struct RejectionSet {
    std::vector<int> indices;
    std::optional<double> threshold;  // empty means no rejections

    bool empty() const { return indices.empty(); }
};

/// Benjamini-Hochberg step-up at level alpha: reject the k smallest p-values
/// where k is the largest index with p_(k) <= k * alpha / n.
inline RejectionSet bh(std::span<const double> p, double alpha) {
    const std::size_t n = p.size();
    if (n == 0) return {};
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::size_t k = 0;
    double thr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cut = static_cast<double>(i + 1) * alpha / static_cast<double>(n);
        if (p[order[i]] <= cut) {
            k = i + 1;
            thr = cut;
        }
    }
    RejectionSet out;
    if (k == 0) return out;
    out.threshold = thr;
    out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

/// Storey-BH: BH at level alpha / pi0_hat with
/// pi0_hat = min{1, (1 + #{p > lambda_s}) / (n (1 - lambda_s))}.
inline RejectionSet storey_bh(std::span<const double> p, double alpha, double lambda_s = 0.5) {
    if (!(lambda_s > 0.0 && lambda_s < 1.0))
        throw std::invalid_argument("storey_bh: lambda_s in (0,1)");
    const std::size_t n = p.size();
    if (n == 0) return {};
    std::size_t above = 0;
    for (double v : p)
        if (v > lambda_s) ++above;
    const double pi0 = std::min(
        1.0, (1.0 + static_cast<double>(above)) / (static_cast<double>(n) * (1.0 - lambda_s)));
    return bh(p, alpha / pi0);
}

}  // namespace adaptg
