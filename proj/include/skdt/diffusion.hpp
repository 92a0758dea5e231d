#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "skdt/array.hpp"
#include "skdt/random.hpp"

namespace skdt::diffusion {

/// beta/alpha/alpha_bar tables indexed 1..T; index 0 holds the clean-data
/// convention alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    void check_t(int t) const;
    /// Posterior variance (1 - abar[t-1]) / (1 - abar[t]) * beta[t].
    double posterior_variance(int t) const;
};

/// Linear betas from beta_start to beta_end.
NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 2e-2);
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// CSV with header t,beta,alpha,alpha_bar.
void write_schedule_csv(std::ostream& os, const NoiseSchedule& sched);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Array q_sample(const Array& x0, int t, const Array& eps, const NoiseSchedule& sched);

/// Anything that predicts the injected noise. Label `num_classes()` is the
/// null (unconditional) label.
class NoisePredictor {
   public:
    virtual ~NoisePredictor() = default;
    virtual Array predict(const Array& x_t, int t, int label) const = 0;
    virtual int num_classes() const = 0;
    int null_label() const { return num_classes(); }
};

void check_label(const NoisePredictor& model, int label);

/// eps_null + scale (eps_cond - eps_null); scale 1 and 0 return one branch verbatim.
Array cfg_combine(const Array& eps_null, const Array& eps_cond, double scale);

/// Guided prediction. scale == 1 evaluates only the conditional branch and
/// scale == 0 only the null branch.
Array cfg_predict(const NoisePredictor& model, const Array& x_t, int t, int label, double scale);

enum class SamplerKind { ddpm, ddim };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::ddim;
    int steps = 50;
    double cfg_scale = 1.0;
    std::uint64_t seed = 0;
};

/// Descending timesteps visited by the sampler. DDPM visits T..1; DDIM
/// visits `steps` evenly spaced timesteps from T down to 1 (just T when
/// steps == 1).
std::vector<int> sampler_timesteps(const SamplerConfig& cfg, const NoiseSchedule& sched);

/// Ancestral update with fixed posterior variance; no noise at t == 1.
Array ddpm_update(const Array& x_t, int t, const Array& eps_hat, const NoiseSchedule& sched, Rng& rng);

/// Deterministic (eta = 0) jump from t to t_prev (t_prev == 0 means clean data).
Array ddim_update(const Array& x_t, int t, int t_prev, const Array& eps_hat, const NoiseSchedule& sched);

Array ddpm_step(const NoisePredictor& model, const Array& x_t, int t, int label, double cfg_scale,
                const NoiseSchedule& sched, Rng& rng);

/// Noise prediction for step `step` (0-based) at timestep `t`.
using EpsFn = std::function<Array(const Array& x_t, int t, std::size_t step)>;

/// Runs the configured sampler over `eps`. DDPM draws its noise from `rng`;
/// DDIM never touches it. When `trajectory` is set it receives x after each step.
Array run_sampler(const SamplerConfig& cfg, const NoiseSchedule& sched, const Array& x_T, const EpsFn& eps, Rng& rng,
                  std::vector<Array>* trajectory = nullptr);

/// Uncached sampling with classifier-free guidance; the DDPM noise stream is
/// seeded from cfg.seed.
Array sample(const NoisePredictor& model, const Array& x_T, int label, const SamplerConfig& cfg,
             const NoiseSchedule& sched);

Array ddim_sample(const NoisePredictor& model, const Array& x_T, int label, const SamplerConfig& cfg,
                  const NoiseSchedule& sched);

/// Rng stream used for the DDPM noise of a sampling run with `seed`.
Rng sampler_rng(std::uint64_t seed);

}  // namespace skdt::diffusion
