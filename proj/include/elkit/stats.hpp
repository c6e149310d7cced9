#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/rng.hpp"

namespace elkit {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct WilcoxonResult {
    double p = 1.0;
    double w_plus = 0.0;
    int n = 0;        // nonzero differences used
    bool exact = false;
};

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped, tied
/// absolute values get midranks. Exact null distribution (dynamic program
/// over all 2^n sign patterns) for n <= 25; normal approximation with
/// continuity and tie corrections beyond that.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& differences) {
    std::vector<double> d;
    for (double x : differences)
        if (x != 0.0) d.push_back(x);
    const int n = static_cast<int>(d.size());
    if (n < 6) throw TooFewSamples("wilcoxon needs at least 6 nonzero differences");

    // midranks of |d|
    std::vector<int> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return std::abs(d[static_cast<std::size_t>(a)]) <
                                         std::abs(d[static_cast<std::size_t>(b)]); });
    std::vector<double> rank(d.size(), 0.0);
    std::vector<int> tie_sizes;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() &&
               std::abs(d[static_cast<std::size_t>(order[j])]) ==
                   std::abs(d[static_cast<std::size_t>(order[i])]))
            ++j;
        const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) rank[static_cast<std::size_t>(order[k])] = mid;
        tie_sizes.push_back(static_cast<int>(j - i));
        i = j;
    }

    WilcoxonResult res;
    res.n = n;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0.0) res.w_plus += rank[i];

    if (n <= 25) {
        res.exact = true;
        // midranks are multiples of 1/2, so doubled ranks are exact integers
        const int total2 = n * (n + 1);
        std::vector<double> count(static_cast<std::size_t>(total2 + 1), 0.0);
        count[0] = 1.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const int r2 = static_cast<int>(std::llround(2.0 * rank[i]));
            for (int s = total2; s >= r2; --s) count[static_cast<std::size_t>(s)] +=
                count[static_cast<std::size_t>(s - r2)];
        }
        const double denom = std::ldexp(1.0, n);  // 2^n
        const int w2 = static_cast<int>(std::llround(2.0 * res.w_plus));
        double p_le = 0.0, p_ge = 0.0;
        for (int s = 0; s <= total2; ++s) {
            if (s <= w2) p_le += count[static_cast<std::size_t>(s)];
            if (s >= w2) p_ge += count[static_cast<std::size_t>(s)];
        }
        res.p = std::min(1.0, 2.0 * std::min(p_le, p_ge) / denom);
        return res;
    }

    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
    for (int t : tie_sizes) {
        const double td = static_cast<double>(t);
        var -= (td * td * td - td) / 48.0;
    }
    const double num = std::max(0.0, std::abs(res.w_plus - mean) - 0.5);
    const double z = var > 0.0 ? num / std::sqrt(var) : 0.0;
    res.p = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    return res;
}

struct BhResult {
    std::vector<bool> reject;
    std::vector<double> adjusted;
};

/// Benjamini-Hochberg step-up procedure at level q, with monotone adjusted
/// p-values (cumulative minimum of m p_(i) / i from the largest rank down).
inline BhResult benjamini_hochberg(const std::vector<double>& p_values, double q) {
    const std::size_t m = p_values.size();
    BhResult out;
    out.reject.assign(m, false);
    out.adjusted.assign(m, 1.0);
    if (m == 0) return out;
    for (double p : p_values)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p-values must lie in [0, 1]");

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

    double running = 1.0;
    for (std::size_t i = m; i-- > 0;) {
        const double stepped =
            p_values[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
        running = std::min(running, stepped);
        out.adjusted[order[i]] = running;
    }
    for (std::size_t i = 0; i < m; ++i) out.reject[i] = out.adjusted[i] <= q;
    return out;
}

/// Percentile bootstrap confidence interval of the sample mean.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& values, double level,
                                              int n_boot, std::uint64_t seed) {
    if (values.size() < 2) throw TooFewSamples("bootstrap_ci needs at least 2 values");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must be in (0, 1)");
    Rng rng(seed);
    const auto n = values.size();
    std::vector<double> means(static_cast<std::size_t>(n_boot));
    for (int b = 0; b < n_boot; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += values[rng.uniform_int(n)];
        means[static_cast<std::size_t>(b)] = sum / static_cast<double>(n);
    }
    const double alpha = 1.0 - level;
    return {quantile(means, alpha / 2.0), quantile(means, 1.0 - alpha / 2.0)};
}

inline std::pair<double, double> bootstrap_ci(const std::vector<double>& values, double level,
                                              std::uint64_t seed) {
    return bootstrap_ci(values, level, 2000, seed);
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw TooFewSamples("median of empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace elkit
