#include "qcm/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace qcm {

MeanVar mean_variance(const std::vector<double>& xs) {
    MeanVar mv;
    mv.count = static_cast<int>(xs.size());
    if (xs.empty()) return mv;
    double s = 0;
    for (double x : xs) s += x;
    mv.mean = s / xs.size();
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - mv.mean) * (x - mv.mean);
        mv.variance = ss / (xs.size() - 1);
    }
    return mv;
}

double binomial_z(long long successes, long long n, double p) {
    if (n <= 0) throw std::invalid_argument("binomial_z: n must be positive");
    const double sigma = std::sqrt(n * p * (1 - p));
    const double diff = successes - n * p;
    if (sigma == 0) {
        return std::abs(diff) <= 1e-12 ? 0.0
                                       : std::numeric_limits<double>::infinity();
    }
    return diff / sigma;
}

namespace {

// Regularized incomplete gamma functions by series / continued fraction.
double gamma_p_series(double a, double x) {
    double sum = 1.0 / a;
    double term = sum;
    double ap = a;
    for (int i = 0; i < 500; ++i) {
        ap += 1;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1 - a;
    double c = 1 / tiny;
    double d = 1 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi_square_sf(double x, double dof) {
    if (x < 0 || dof <= 0) throw std::invalid_argument("chi_square_sf: bad arguments");
    if (x == 0) return 1.0;
    const double a = dof / 2, half = x / 2;
    if (half < a + 1) return 1.0 - gamma_p_series(a, half);
    return gamma_q_contfrac(a, half);
}

double chi_square_uniform_pvalue(const std::vector<long long>& counts) {
    if (counts.size() < 2) throw std::invalid_argument("need at least 2 cells");
    long long total = 0;
    for (long long c : counts) total += c;
    if (total == 0) return 1.0;
    const double expected = static_cast<double>(total) / counts.size();
    double chi2 = 0;
    for (long long c : counts) {
        const double d = c - expected;
        chi2 += d * d / expected;
    }
    return chi_square_sf(chi2, static_cast<double>(counts.size() - 1));
}

double g_test_homogeneity_pvalue(const std::vector<long long>& a,
                                 const std::vector<long long>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("histograms must have equal nonzero size");
    }
    long long na = 0, nb = 0;
    for (long long c : a) na += c;
    for (long long c : b) nb += c;
    if (na == 0 || nb == 0) return 1.0;
    const double total = static_cast<double>(na + nb);
    double g = 0;
    int used_cells = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long long cell = a[i] + b[i];
        if (cell == 0) continue;
        ++used_cells;
        if (a[i] > 0) g += a[i] * std::log(a[i] * total / (static_cast<double>(cell) * na));
        if (b[i] > 0) g += b[i] * std::log(b[i] * total / (static_cast<double>(cell) * nb));
    }
    g *= 2;
    if (used_cells < 2) return 1.0;
    return chi_square_sf(g, static_cast<double>(used_cells - 1));
}

Regression linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("linear_fit: need matching samples, n >= 2");
    }
    const std::size_t n = x.size();
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("linear_fit: degenerate x values");
    Regression r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    if (syy > 0) {
        double ss_res = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = y[i] - (r.intercept + r.slope * x[i]);
            ss_res += e * e;
        }
        r.r_squared = 1 - ss_res / syy;
    }
    return r;
}

double slope_stderr(const std::vector<double>& x, const std::vector<double>& y,
                    const Regression& fit) {
    if (x.size() != y.size() || x.size() < 3) return 0.0;
    const std::size_t n = x.size();
    double sx = 0;
    for (double v : x) sx += v;
    const double mx = sx / n;
    double sxx = 0, ss_res = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        const double e = y[i] - (fit.intercept + fit.slope * x[i]);
        ss_res += e * e;
    }
    if (sxx == 0) return 0.0;
    return std::sqrt(ss_res / (n - 2) / sxx);
}

double circular_distance(double a, double b, double period) {
    double d = std::fmod(std::abs(a - b), period);
    if (d > period / 2) d = period - d;
    return d;
}

double circular_mean(const std::vector<double>& xs, double period) {
    if (xs.empty()) throw std::invalid_argument("circular_mean: empty input");
    const double w = 2 * M_PI / period;
    double s = 0, c = 0;
    for (double x : xs) {
        s += std::sin(x * w);
        c += std::cos(x * w);
    }
    double ang = std::atan2(s, c) / w;
    if (ang < 0) ang += period;
    return ang;
}

double circular_mse(const std::vector<double>& estimates, double truth,
                    double period) {
    if (estimates.empty()) throw std::invalid_argument("circular_mse: empty input");
    double acc = 0;
    for (double e : estimates) {
        const double d = circular_distance(e, truth, period);
        acc += d * d;
    }
    return acc / estimates.size();
}

double circular_mse(const std::vector<double>& estimates,
                    const std::vector<double>& truths, double period) {
    if (estimates.empty() || estimates.size() != truths.size()) {
        throw std::invalid_argument("circular_mse: size mismatch");
    }
    double acc = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const double d = circular_distance(estimates[i], truths[i], period);
        acc += d * d;
    }
    return acc / estimates.size();
}

}  // namespace qcm
