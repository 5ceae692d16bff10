#pragma once

#include "ncps/error.hpp"
#include "ncps/io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

namespace ncps {

/// Monte Carlo estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;

    /// |value - expected| <= k standard errors (plus a rounding floor).
    bool within(double expected, double k = 3.0) const {
        return std::abs(value - expected) <= k * stderr_ + 1e-12 * (1.0 + std::abs(expected));
    }
};

inline Estimate mean_estimate(std::span<const double> v) {
    Estimate e;
    e.n = v.size();
    if (v.empty()) return e;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    e.value = mean;
    if (v.size() > 1) e.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return e;
}

/// Sample variance with a large-sample standard error from the fourth central moment.
inline Estimate variance_estimate(std::span<const double> v) {
    Estimate e;
    e.n = v.size();
    if (v.size() < 2) return e;
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double c = (x - mean) * (x - mean);
        m2 += c;
        m4 += c * c;
    }
    e.value = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    e.stderr_ = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
    return e;
}

/// Two estimates agree when their difference is inside k combined standard errors.
inline bool agree(const Estimate& a, const Estimate& b, double k = 3.0) {
    return std::abs(a.value - b.value) <= k * std::hypot(a.stderr_, b.stderr_) + 1e-12;
}

struct KsResult {
    double distance = 0.0;
    double p_value = 1.0;
};

/// Asymptotic Kolmogorov tail Q(lambda) = 2 sum_j (-1)^{j-1} e^{-2 j^2 lambda^2}.
inline double kolmogorov_q(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.size() < 100 || b.size() < 100) throw Error(ErrorKind::TooFewSamples, "KS test needs at least 100 samples each");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

struct KdeEstimate {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;

    /// Trapezoid mass over the grid.
    double mass() const {
        double m = 0.0;
        for (std::size_t k = 1; k < grid.size(); ++k) m += 0.5 * (grid[k] - grid[k - 1]) * (density[k] + density[k - 1]);
        return m;
    }
};

/// Silverman rule 1.06 sd n^{-1/5}.
inline double silverman_bandwidth(std::span<const double> samples) {
    const Estimate v = variance_estimate(samples);
    return 1.06 * std::sqrt(v.value) * std::pow(static_cast<double>(samples.size()), -0.2);
}

/// Gaussian-kernel density on `grid`; an empty grid means 512 points over the sample
/// range padded by five bandwidths.
inline KdeEstimate kde(std::span<const double> samples, std::vector<double> grid = {}) {
    if (samples.size() < 100) throw Error(ErrorKind::TooFewSamples, "KDE needs at least 100 samples");
    const double h = silverman_bandwidth(samples);
    if (!(h > 0.0)) throw Error(ErrorKind::TooFewSamples, "KDE bandwidth is zero: samples have no spread");
    if (grid.empty()) {
        const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
        const double a = *lo - 5.0 * h, b = *hi + 5.0 * h;
        constexpr int points = 512;
        grid.resize(points);
        for (int k = 0; k < points; ++k) grid[static_cast<std::size_t>(k)] = a + (b - a) * k / (points - 1);
    }
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    KdeEstimate out;
    out.bandwidth = h;
    out.density.assign(grid.size(), 0.0);
    const double norm = 1.0 / (static_cast<double>(sorted.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    const double cut = 9.0 * h;  // kernel below 1e-17 of its peak
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto first = std::lower_bound(sorted.begin(), sorted.end(), grid[g] - cut);
        const auto last = std::upper_bound(first, sorted.end(), grid[g] + cut);
        double sum = 0.0;
        for (auto it = first; it != last; ++it) {
            const double z = (grid[g] - *it) / h;
            sum += std::exp(-0.5 * z * z);
        }
        out.density[g] = sum * norm;
    }
    out.grid = std::move(grid);
    return out;
}

inline void write_kde_csv(std::ostream& os, const KdeEstimate& k) {
    CsvWriter w(os);
    w.header({"grid", "density"});
    for (std::size_t i = 0; i < k.grid.size(); ++i) w.cell(k.grid[i]).cell(k.density[i]).end();
}

}  // namespace ncps
