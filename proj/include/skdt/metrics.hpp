#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "skdt/array.hpp"

namespace skdt::metrics {

/// Returned by psnr() when the inputs are identical.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse(const Array& a, const Array& b);

/// 10 log10(peak^2 / MSE).
double psnr(const Array& a, const Array& b, double peak);

struct SsimConfig {
    double c1;
    double c2;
    double c3;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;

    /// C1 = (0.01 R)^2, C2 = (0.03 R)^2, C3 = C2 / 2.
    static SsimConfig for_range(double peak);
};

/// Whole-image SSIM with population moments.
double ssim(const Array& a, const Array& b, const SsimConfig& cfg);

/// Flattened cosine similarity, clamped to [-1, 1]. Zero vectors are an error.
double cosine_similarity(const Array& u, const Array& v);

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Sample mean and unbiased, symmetrized covariance of flattened samples.
GaussianStats fit_gaussian(const std::vector<Array>& samples);
GaussianStats fit_gaussian(const Eigen::MatrixXd& rows);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
double frechet_gaussian(const GaussianStats& g1, const GaussianStats& g2);

}  // namespace skdt::metrics
