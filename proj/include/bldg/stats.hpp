#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"

namespace bldg {

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Two-sided Student-t tail probability at |t| with df degrees of freedom.
inline double student_t_two_sided_p(double t, int df) {
    require(df >= 1, "student_t_two_sided_p: df must be >= 1");
    const double x = df / (df + t * t);
    return std::clamp(detail::incomplete_beta(df / 2.0, 0.5, x), 0.0, 1.0);
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

// Paired Student t-test on the differences a - b; sample sd uses the n-1
// denominator. Identical inputs return t = 0, p = 1; zero variance with a
// nonzero mean is an error.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "paired_t_test: size mismatch");
    const int n = static_cast<int>(a.size());
    require(n >= 2, "paired_t_test: need n >= 2");
    std::vector<double> d(n);
    for (int i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1));
    TTestResult out;
    out.df = n - 1;
    if (sd == 0.0) {
        require(mean == 0.0,
                "paired_t_test: zero variance with nonzero mean difference (degenerate)");
        out.t = 0.0;
        out.p = 1.0;
        return out;
    }
    out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    out.p = student_t_two_sided_p(out.t, out.df);
    return out;
}

struct WilcoxonResult {
    double w = 0.0;   // min(W+, W-)
    double p = 1.0;   // two-sided
    int m = 0;        // pairs remaining after zero removal
    bool exact = false;
};

namespace detail {

// Ranks of |d| with average ranks on ties, doubled so they stay integral.
inline std::vector<std::int64_t> doubled_ranks(const std::vector<double>& absd) {
    const int m = static_cast<int>(absd.size());
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) { return absd[i] < absd[j]; });
    std::vector<std::int64_t> rank2(m, 0);
    int pos = 0;
    while (pos < m) {
        int end = pos;
        while (end + 1 < m && absd[order[end + 1]] == absd[order[pos]]) ++end;
        // average of ranks pos+1 .. end+1, doubled: (pos+1 + end+1)
        const std::int64_t r2 = static_cast<std::int64_t>(pos + 1) + (end + 1);
        for (int i = pos; i <= end; ++i) rank2[order[i]] = r2;
        pos = end + 1;
    }
    return rank2;
}

}  // namespace detail

// Wilcoxon signed rank test. Zero differences are dropped; |d| ranks use
// average ranks on ties; W = min(W+, W-). Up to m = 25 the two-sided p is
// exact over all 2^m sign assignments (computed from the rank-sum
// distribution); beyond that a normal approximation with tie and
// continuity corrections is used.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "wilcoxon_signed_rank: size mismatch");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i] - b[i];
        if (v != 0.0) d.push_back(v);
    }
    require(!d.empty(), "wilcoxon_signed_rank: all differences are zero");
    const int m = static_cast<int>(d.size());

    std::vector<double> absd(m);
    for (int i = 0; i < m; ++i) absd[i] = std::abs(d[i]);
    const std::vector<std::int64_t> rank2 = detail::doubled_ranks(absd);

    std::int64_t w_plus2 = 0, total2 = 0;
    for (int i = 0; i < m; ++i) {
        total2 += rank2[i];
        if (d[i] > 0.0) w_plus2 += rank2[i];
    }
    const std::int64_t w_minus2 = total2 - w_plus2;
    const std::int64_t w2 = std::min(w_plus2, w_minus2);

    WilcoxonResult out;
    out.m = m;
    out.w = static_cast<double>(w2) / 2.0;

    if (m <= 25) {
        out.exact = true;
        // Null distribution of 2*W+ as subset sums of the doubled ranks.
        std::vector<std::uint64_t> counts(static_cast<std::size_t>(total2) + 1, 0);
        counts[0] = 1;
        for (int i = 0; i < m; ++i) {
            const std::int64_t r = rank2[i];
            for (std::int64_t s = total2; s >= r; --s) counts[s] += counts[s - r];
        }
        std::uint64_t le = 0;
        for (std::int64_t s = 0; s <= w2; ++s) le += counts[s];
        const double p = 2.0 * static_cast<double>(le) / std::pow(2.0, m);
        out.p = std::min(1.0, p);
        return out;
    }

    // Tie-corrected variance; ties counted over the rank groups.
    const double mean = m * (m + 1) / 4.0;
    double tie_term = 0.0;
    {
        std::vector<std::int64_t> sorted = rank2;
        std::sort(sorted.begin(), sorted.end());
        std::size_t pos = 0;
        while (pos < sorted.size()) {
            std::size_t end = pos;
            while (end + 1 < sorted.size() && sorted[end + 1] == sorted[pos]) ++end;
            const double t = static_cast<double>(end - pos + 1);
            tie_term += t * t * t - t;
            pos = end + 1;
        }
    }
    const double var = m * (m + 1) * (2.0 * m + 1.0) / 24.0 - tie_term / 48.0;
    require(var > 0.0, "wilcoxon_signed_rank: zero variance");
    const double z = (out.w - mean + 0.5) / std::sqrt(var);
    out.p = std::clamp(2.0 * detail::normal_cdf(z), 0.0, 1.0);
    return out;
}

// Per-metric paired comparison of two model configurations.
struct MetricComparison {
    std::string metric;
    std::vector<double> differences;  // one per run, model A minus model B
    double mean_difference = 0.0;
    double t_stat = 0.0;
    double t_p = 1.0;
    double w_stat = 0.0;
    double w_p = 1.0;
    bool t_significant = false;
    bool w_significant = false;

    nlohmann::json to_json() const {
        return {{"metric", metric},
                {"differences", differences},
                {"mean_difference", mean_difference},
                {"t_stat", t_stat},
                {"t_p", t_p},
                {"t_significant", t_significant},
                {"wilcoxon_stat", w_stat},
                {"wilcoxon_p", w_p},
                {"wilcoxon_significant", w_significant}};
    }
};

struct ComparisonReport {
    int runs = 0;
    double alpha = 0.05;
    std::vector<MetricComparison> metrics;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["runs"] = runs;
        j["alpha"] = alpha;
        for (const auto& m : metrics) j["metrics"].push_back(m.to_json());
        return j;
    }
};

}  // namespace bldg
