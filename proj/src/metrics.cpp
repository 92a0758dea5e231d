#include "skdt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace skdt::metrics {

namespace {

void require_same(const char* what, const Array& a, const Array& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Eigenvalues below this (relative to the largest magnitude) mean the input
// was not PSD.
constexpr double kPsdTol = 1e-9;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -kPsdTol * scale) {
            throw std::domain_error(std::string(what) + ": matrix is not positive semi-definite (eigenvalue " +
                                    std::to_string(ev[i]) + ")");
        }
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double mse(const Array& a, const Array& b) {
    require_same("mse", a, b);
    if (a.size() == 0) throw ShapeError("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double psnr(const Array& a, const Array& b, double peak) {
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    const double e = mse(a, b);
    if (e == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / e);
}

SsimConfig SsimConfig::for_range(double peak) {
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    return SsimConfig{c1, c2, c2 / 2.0};
}

double ssim(const Array& a, const Array& b, const SsimConfig& cfg) {
    require_same("ssim", a, b);
    if (a.size() == 0) throw ShapeError("ssim: empty input");
    if (!(cfg.c1 > 0 && cfg.c2 > 0 && cfg.c3 > 0)) throw std::invalid_argument("ssim: constants must be positive");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double va = 0.0, vb = 0.0, cab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cab += (a[i] - ma) * (b[i] - mb);
    }
    va /= n;
    vb /= n;
    cab /= n;
    const double sa = std::sqrt(va), sb = std::sqrt(vb);
    const double l = (2 * ma * mb + cfg.c1) / (ma * ma + mb * mb + cfg.c1);
    const double c = (2 * sa * sb + cfg.c2) / (va + vb + cfg.c2);
    const double s = (cab + cfg.c3) / (sa * sb + cfg.c3);
    auto powf = [](double base, double e) { return e == 1.0 ? base : std::pow(base, e); };
    return powf(l, cfg.alpha) * powf(c, cfg.beta) * powf(s, cfg.gamma);
}

double cosine_similarity(const Array& u, const Array& v) {
    require_same("cosine_similarity", u, v);
    const double nu = dot(u, u), nv = dot(v, v);
    if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine_similarity: zero vector");
    const double c = dot(u, v) / std::sqrt(nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& rows) {
    if (rows.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    GaussianStats g;
    g.mean = rows.colwise().mean().transpose();
    Eigen::MatrixXd centered = rows.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    return g;
}

GaussianStats fit_gaussian(const std::vector<Array>& samples) {
    if (samples.size() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    const std::size_t dim = samples[0].size();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() != dim) throw ShapeError("fit_gaussian: samples differ in size");
        for (std::size_t j = 0; j < dim; ++j) rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i][j];
    }
    return fit_gaussian(rows);
}

double frechet_gaussian(const GaussianStats& g1, const GaussianStats& g2) {
    const auto d = g1.mean.size();
    if (g2.mean.size() != d || g1.cov.rows() != d || g1.cov.cols() != d || g2.cov.rows() != d || g2.cov.cols() != d) {
        throw ShapeError("frechet_gaussian: dimension mismatch");
    }
    // Tr((S1 S2)^{1/2}) == Tr((S1^{1/2} S2 S1^{1/2})^{1/2}); the latter is symmetric.
    const Eigen::MatrixXd r1 = psd_sqrt(g1.cov, "frechet_gaussian");
    psd_sqrt(g2.cov, "frechet_gaussian");
    const Eigen::MatrixXd inner = r1 * g2.cov * r1;
    const double cross = psd_sqrt(inner, "frechet_gaussian").trace();
    const double dist = (g1.mean - g2.mean).squaredNorm() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross;
    if (dist < -1e-6) throw std::domain_error("frechet_gaussian: negative distance " + std::to_string(dist));
    return std::max(dist, 0.0);
}

}  // namespace skdt::metrics
