#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <vector>

#include "skdt/array.hpp"
#include "skdt/autodiff.hpp"
#include "skdt/cache.hpp"
#include "skdt/model.hpp"

namespace skdt::stability {

/// Two random directions in parameter space, each with global norm
/// eps_norm * ||theta||.
struct PerturbationSpec {
    ParamSet delta;
    ParamSet eta;
    double eps_norm = 0.0;
    std::uint64_t seed = 0;
};

/// Elementwise standard normal directions, globally rescaled.
PerturbationSpec make_perturbation(const ParamSet& theta, double eps_norm, std::uint64_t seed);

/// theta + a * delta + b * eta.
ParamSet perturb_params(const ParamSet& theta, const PerturbationSpec& spec, double a, double b);

struct Landscape {
    std::vector<double> alphas;
    std::vector<double> betas;
    std::vector<std::vector<double>> value;  // [alpha index][beta index]

    double mean() const;
};

using ParamFn = std::function<Array(const ParamSet&)>;

/// Cosine similarity between f(theta) and f(theta') over the grid.
Landscape landscape(const ParamFn& f, const ParamSet& theta, const PerturbationSpec& spec,
                    const std::vector<double>& alphas, const std::vector<double>& betas);

/// Landscape of the model's noise prediction at (x, t, label).
Landscape landscape(const model::SkipDiT& model, const Array& x, int t, int label, const PerturbationSpec& spec,
                    const std::vector<double>& alphas, const std::vector<double>& betas);

/// Symmetric grid of `points` values over [-radius, radius].
std::vector<double> symmetric_grid(double radius, int points);

void write_landscape_csv(std::ostream& os, const Landscape& l);

struct SimilarityCurve {
    std::vector<int> timesteps;
    std::vector<double> mean;
    std::vector<double> std;  // population spread across samples
};

/// How the accelerated run reuses work.
struct ReusePolicy {
    enum class Kind { skip_cache, static_interval, static_even };
    Kind kind = Kind::skip_cache;
    cache::CachePlan plan;  // skip_cache
    int interval = 1;       // static_interval
    int evals = 1;          // static_even
};

/// Per step, cosine similarity between the prediction an accelerated run
/// consumed and the full model prediction at the same x_t.
SimilarityCurve caching_similarity_curve(const model::SkipDiT& model,
                                         const std::vector<cache::CalibrationSample>& samples,
                                         const ReusePolicy& policy, const diffusion::SamplerConfig& cfg,
                                         const diffusion::NoiseSchedule& sched);

/// Per-step cosine similarities of one traced run against full predictions.
std::vector<double> trace_similarity(const model::SkipDiT& model, const cache::SampleTrace& trace, int label,
                                     const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched);

void write_curve_csv(std::ostream& os, const SimilarityCurve& c);

class SpectralNonConvergence : public std::runtime_error {
   public:
    SpectralNonConvergence(double last, int iters);
    double last_estimate() const { return last_; }

   private:
    double last_;
};

struct SpectralEstimate {
    double sigma = 0.0;
    int iterations = 0;
};

/// Largest singular value of the Jacobian of f at x by power iteration on
/// J^T J, started from a seeded normal vector.
SpectralEstimate spectral_norm(const GraphFn& f, const Array& x, double tol = 1e-7, int max_iters = 500,
                               std::uint64_t seed = 0);

/// Ideal contraction model: identical layers with ratio gamma, scalar skip mixing.
struct IdealModelSpec {
    int depth = 4;
    double gamma = 0.9;
    double mix = 0.5;
    double delta_step = 0.0;
    double eps_max = 1.0;

    void validate() const;
};

/// (1 - mix) gamma + mix gamma^(2l - L) for L/2 < l <= L.
double ideal_layer_bound(double gamma, double mix, int l, int depth);

struct IdealBounds {
    double skip;
    double vanilla;
};

/// Skip bound: gamma^(L/2) for the lower half times the upper-half layer bounds.
IdealBounds ideal_model_bounds(const IdealModelSpec& spec);

/// (Lip^T - 1) / (Lip - 1) * delta, T * delta at Lip == 1.
double cumulative_error(double lip, double delta_step, long long T);

inline constexpr long long kUnboundedReuse = std::numeric_limits<long long>::max();

/// Largest tau with cumulative_error(lip, delta, tau) <= eps_max (relative
/// slack 1e-12), 0 when delta > eps_max, kUnboundedReuse when the error never
/// exceeds eps_max.
long long max_reuse_interval(double lip, double delta_step, double eps_max);

struct ChainSpec {
    int depth = 4;
    double gamma = 0.9;
    double mix = 0.5;
    int width = 16;
    /// Weight of a gelu term added to each layer; 0 keeps the chain linear.
    double nonlinearity = 0.0;
};

struct ChainReport {
    std::vector<double> layer_sigma;  // measured after rescaling
    double sigma_vanilla = 0.0;
    double sigma_skip = 0.0;
    double gamma_pow_depth = 0.0;
    bool skip_below_vanilla = false;
};

/// Builds `depth` random layers rescaled to spectral norm gamma, composes them
/// plainly and with convex long skips (block l reads
/// (1 - mix) o_{l-1} + mix o_{L+1-l} for l > L/2), and measures both
/// end-to-end Jacobian norms.
ChainReport empirical_theorem1_check(std::uint64_t seed, const ChainSpec& spec);

}  // namespace skdt::stability
