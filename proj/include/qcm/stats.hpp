#pragma once

#include <cstdint>
#include <vector>

namespace qcm {

struct MeanVar {
    double mean = 0;
    double variance = 0;  // unbiased sample variance
    int count = 0;
};

MeanVar mean_variance(const std::vector<double>& xs);

// z-score of an observed success count against Binomial(n, p). When the null
// deviation is zero the z is 0 for an exact match and infinite otherwise.
double binomial_z(long long successes, long long n, double p);

// Survival function of the chi-square distribution (regularized upper
// incomplete gamma Q(k/2, x/2)).
double chi_square_sf(double x, double dof);

// Pearson chi-square test of observed counts against uniform cell
// probabilities; returns the p-value.
double chi_square_uniform_pvalue(const std::vector<long long>& counts);

// G-test of homogeneity between two observation histograms over the same
// cells; equivalently 2 * n * (plug-in mutual information in nats) between
// the sample label and the cell. Returns the p-value.
double g_test_homogeneity_pvalue(const std::vector<long long>& a,
                                 const std::vector<long long>& b);

struct Regression {
    double slope = 0;
    double intercept = 0;
    double r_squared = 1;
};

Regression linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// Residual-based standard error of the fitted slope; 0 when fewer than 3
// points leave no degrees of freedom.
double slope_stderr(const std::vector<double>& x, const std::vector<double>& y,
                    const Regression& fit);

// Distance and statistics on the circle of the given period.
double circular_distance(double a, double b, double period);
double circular_mean(const std::vector<double>& xs, double period);
double circular_mse(const std::vector<double>& estimates, double truth, double period);
double circular_mse(const std::vector<double>& estimates, const std::vector<double>& truths,
                    double period);

}  // namespace qcm
