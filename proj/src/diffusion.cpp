#include "skdt/diffusion.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

namespace skdt::diffusion {

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > T) {
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
}

double NoiseSchedule::posterior_variance(int t) const {
    check_t(t);
    return (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw std::invalid_argument("schedule: need at least one timestep");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta.assign(betas.size() + 1, 0.0);
    s.alpha.assign(betas.size() + 1, 1.0);
    s.alpha_bar.assign(betas.size() + 1, 1.0);
    for (int t = 1; t <= s.T; ++t) {
        const double b = betas[t - 1];
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta must lie in (0, 1)");
        s.beta[t] = b;
        s.alpha[t] = 1.0 - b;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(T);
    for (int i = 0; i < T; ++i) {
        betas[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
    }
    return schedule_from_betas(betas);
}

void write_schedule_csv(std::ostream& os, const NoiseSchedule& sched) {
    os << "t,beta,alpha,alpha_bar\n" << std::setprecision(17);
    for (int t = 1; t <= sched.T; ++t) {
        os << t << ',' << sched.beta[t] << ',' << sched.alpha[t] << ',' << sched.alpha_bar[t] << '\n';
    }
}

Array q_sample(const Array& x0, int t, const Array& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    if (eps.shape() != x0.shape()) {
        throw ShapeError("q_sample: eps " + shape_str(eps.shape()) + " vs x0 " + shape_str(x0.shape()));
    }
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Array out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

void check_label(const NoisePredictor& model, int label) {
    if (label < 0 || label > model.num_classes()) {
        throw std::out_of_range("unknown class label " + std::to_string(label) + " (valid 0.." +
                                std::to_string(model.num_classes()) + ", null = " +
                                std::to_string(model.num_classes()) + ")");
    }
}

Array cfg_combine(const Array& eps_null, const Array& eps_cond, double scale) {
    if (scale == 1.0) return eps_cond;
    if (scale == 0.0) return eps_null;
    if (eps_null.shape() != eps_cond.shape()) throw ShapeError("cfg_combine: branch shapes differ");
    Array out(eps_null.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_null[i] + scale * (eps_cond[i] - eps_null[i]);
    return out;
}

Array cfg_predict(const NoisePredictor& model, const Array& x_t, int t, int label, double scale) {
    if (!(scale >= 0.0)) throw std::invalid_argument("cfg_predict: scale must be >= 0");
    check_label(model, label);
    if (scale == 1.0) return model.predict(x_t, t, label);
    if (scale == 0.0) return model.predict(x_t, t, model.null_label());
    return cfg_combine(model.predict(x_t, t, model.null_label()), model.predict(x_t, t, label), scale);
}

std::vector<int> sampler_timesteps(const SamplerConfig& cfg, const NoiseSchedule& sched) {
    std::vector<int> ts;
    if (cfg.kind == SamplerKind::ddpm) {
        for (int t = sched.T; t >= 1; --t) ts.push_back(t);
        return ts;
    }
    if (cfg.steps < 1) throw std::invalid_argument("ddim: empty step subsequence");
    if (cfg.steps > sched.T) throw std::invalid_argument("ddim: steps exceed schedule length");
    if (cfg.steps == 1) return {sched.T};
    for (int i = cfg.steps - 1; i >= 0; --i) {
        ts.push_back(1 + static_cast<int>((static_cast<long long>(sched.T - 1) * i) / (cfg.steps - 1)));
    }
    return ts;
}

Array ddpm_update(const Array& x_t, int t, const Array& eps_hat, const NoiseSchedule& sched, Rng& rng) {
    sched.check_t(t);
    if (eps_hat.shape() != x_t.shape()) throw ShapeError("ddpm_update: eps shape differs from x_t");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
    const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
    Array out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
    if (t > 1) {
        const double sigma = std::sqrt(sched.posterior_variance(t));
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto& v : out.values()) v += sigma * nd(rng);
    }
    return out;
}

Array ddim_update(const Array& x_t, int t, int t_prev, const Array& eps_hat, const NoiseSchedule& sched) {
    sched.check_t(t);
    if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddim_update: t_prev must lie in [0, t)");
    if (eps_hat.shape() != x_t.shape()) throw ShapeError("ddim_update: eps shape differs from x_t");
    const double ab = sched.alpha_bar[t];
    const double ab_prev = sched.alpha_bar[t_prev];
    const double s = std::sqrt(1.0 - ab), sa = std::sqrt(ab);
    const double sp = std::sqrt(ab_prev), sn = std::sqrt(1.0 - ab_prev);
    Array out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x0 = (x_t[i] - s * eps_hat[i]) / sa;
        out[i] = sp * x0 + sn * eps_hat[i];
    }
    return out;
}

Array ddpm_step(const NoisePredictor& model, const Array& x_t, int t, int label, double cfg_scale,
                const NoiseSchedule& sched, Rng& rng) {
    return ddpm_update(x_t, t, cfg_predict(model, x_t, t, label, cfg_scale), sched, rng);
}

Array run_sampler(const SamplerConfig& cfg, const NoiseSchedule& sched, const Array& x_T, const EpsFn& eps, Rng& rng,
                  std::vector<Array>* trajectory) {
    const std::vector<int> ts = sampler_timesteps(cfg, sched);
    Array x = x_T;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        Array e = eps(x, t, k);
        if (cfg.kind == SamplerKind::ddpm) {
            x = ddpm_update(x, t, e, sched, rng);
        } else {
            const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
            x = ddim_update(x, t, t_prev, e, sched);
        }
        if (trajectory) trajectory->push_back(x);
    }
    return x;
}

Rng sampler_rng(std::uint64_t seed) { return Rng(mix_seed(seed, 0x5a4d)); }

Array sample(const NoisePredictor& model, const Array& x_T, int label, const SamplerConfig& cfg,
             const NoiseSchedule& sched) {
    check_label(model, label);
    Rng rng = sampler_rng(cfg.seed);
    return run_sampler(
        cfg, sched, x_T,
        [&](const Array& x, int t, std::size_t) { return cfg_predict(model, x, t, label, cfg.cfg_scale); }, rng);
}

Array ddim_sample(const NoisePredictor& model, const Array& x_T, int label, const SamplerConfig& cfg,
                  const NoiseSchedule& sched) {
    SamplerConfig c = cfg;
    c.kind = SamplerKind::ddim;
    return sample(model, x_T, label, c, sched);
}

}  // namespace skdt::diffusion
