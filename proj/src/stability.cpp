#include "skdt/stability.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "skdt/metrics.hpp"
#include "skdt/random.hpp"

namespace skdt::stability {

using diffusion::NoiseSchedule;
using diffusion::SamplerConfig;

PerturbationSpec make_perturbation(const ParamSet& theta, double eps_norm, std::uint64_t seed) {
    if (!(eps_norm >= 0.0)) throw std::invalid_argument("perturbation: eps_norm must be >= 0");
    const double target = eps_norm * theta.global_norm();
    auto direction = [&](std::uint64_t stream) {
        Rng rng(mix_seed(seed, stream));
        ParamSet d;
        for (const auto& [name, arr] : theta) d.add(name, randn(arr.shape(), rng));
        const double n = d.global_norm();
        for (auto& [name, arr] : d) arr *= n > 0.0 ? target / n : 0.0;
        return d;
    };
    return PerturbationSpec{direction(1), direction(2), eps_norm, seed};
}

ParamSet perturb_params(const ParamSet& theta, const PerturbationSpec& spec, double a, double b) {
    if (!theta.same_layout(spec.delta) || !theta.same_layout(spec.eta)) {
        throw ShapeError("perturb_params: directions are not shaped like the parameters");
    }
    ParamSet out = theta;
    for (auto& [name, arr] : out) {
        const Array& d = spec.delta.get(name);
        const Array& e = spec.eta.get(name);
        for (std::size_t i = 0; i < arr.size(); ++i) arr[i] = arr[i] + a * d[i] + b * e[i];
    }
    return out;
}

double Landscape::mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& row : value)
        for (double v : row) {
            s += v;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

Landscape landscape(const ParamFn& f, const ParamSet& theta, const PerturbationSpec& spec,
                    const std::vector<double>& alphas, const std::vector<double>& betas) {
    for (double v : alphas)
        if (!std::isfinite(v)) throw std::invalid_argument("landscape: grid must be finite");
    for (double v : betas)
        if (!std::isfinite(v)) throw std::invalid_argument("landscape: grid must be finite");
    const Array base = f(theta);
    Landscape l{alphas, betas, {}};
    for (double a : alphas) {
        std::vector<double> row;
        for (double b : betas) row.push_back(metrics::cosine_similarity(base, f(perturb_params(theta, spec, a, b))));
        l.value.push_back(std::move(row));
    }
    return l;
}

Landscape landscape(const model::SkipDiT& model, const Array& x, int t, int label, const PerturbationSpec& spec,
                    const std::vector<double>& alphas, const std::vector<double>& betas) {
    auto f = [&](const ParamSet& p) {
        model::SkipDiT m(model.config(), p, model.bypass());
        return m.predict(x, t, label);
    };
    return landscape(f, model.params(), spec, alphas, betas);
}

std::vector<double> symmetric_grid(double radius, int points) {
    if (points < 1) throw std::invalid_argument("symmetric_grid: need at least one point");
    if (points == 1) return {0.0};
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = -radius + 2.0 * radius * i / (points - 1);
    if (points % 2 == 1) g[points / 2] = 0.0;
    return g;
}

void write_landscape_csv(std::ostream& os, const Landscape& l) {
    os << "alpha,beta,value\n" << std::setprecision(17);
    for (std::size_t i = 0; i < l.alphas.size(); ++i)
        for (std::size_t j = 0; j < l.betas.size(); ++j)
            os << l.alphas[i] << ',' << l.betas[j] << ',' << l.value[i][j] << '\n';
}

std::vector<double> trace_similarity(const model::SkipDiT& model, const cache::SampleTrace& trace, int label,
                                     const SamplerConfig& cfg, const NoiseSchedule& sched) {
    const std::vector<int> ts = diffusion::sampler_timesteps(cfg, sched);
    if (trace.inputs.size() != ts.size() || trace.predictions.size() != ts.size()) {
        throw std::invalid_argument("trace_similarity: trace length differs from the sampler steps");
    }
    std::vector<double> out;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const Array full = diffusion::cfg_predict(model, trace.inputs[k], ts[k], label, cfg.cfg_scale);
        out.push_back(metrics::cosine_similarity(trace.predictions[k], full));
    }
    return out;
}

SimilarityCurve caching_similarity_curve(const model::SkipDiT& model,
                                         const std::vector<cache::CalibrationSample>& samples,
                                         const ReusePolicy& policy, const SamplerConfig& cfg,
                                         const NoiseSchedule& sched) {
    if (samples.empty()) throw std::invalid_argument("caching_similarity_curve: no samples");
    SimilarityCurve c;
    c.timesteps = diffusion::sampler_timesteps(cfg, sched);
    const std::size_t steps = c.timesteps.size();
    std::vector<std::vector<double>> per(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        cache::SampleTrace trace;
        if (policy.kind == ReusePolicy::Kind::skip_cache) {
            cache::cached_sample(model, samples[s].x_T, samples[s].label, policy.plan, cfg, sched, nullptr, &trace);
        } else if (policy.kind == ReusePolicy::Kind::static_interval) {
            cache::static_interval_baseline(model, samples[s].x_T, samples[s].label, policy.interval, cfg, sched,
                                            nullptr, &trace);
        } else {
            cache::static_schedule_baseline(model, samples[s].x_T, samples[s].label,
                                            cache::even_refresh_steps(static_cast<int>(steps), policy.evals), cfg,
                                            sched, nullptr, &trace);
        }
        per[s] = trace_similarity(model, trace, samples[s].label, cfg, sched);
    }
    const double n = static_cast<double>(samples.size());
    for (std::size_t k = 0; k < steps; ++k) {
        double m = 0.0, v = 0.0;
        for (const auto& row : per) m += row[k];
        m /= n;
        for (const auto& row : per) v += (row[k] - m) * (row[k] - m);
        c.mean.push_back(m);
        c.std.push_back(std::sqrt(v / n));
    }
    return c;
}

void write_curve_csv(std::ostream& os, const SimilarityCurve& c) {
    os << "t,mean,std\n" << std::setprecision(17);
    for (std::size_t k = 0; k < c.timesteps.size(); ++k) os << c.timesteps[k] << ',' << c.mean[k] << ',' << c.std[k] << '\n';
}

SpectralNonConvergence::SpectralNonConvergence(double last, int iters)
    : std::runtime_error("spectral_norm: no convergence after " + std::to_string(iters) +
                         " iterations (last estimate " + std::to_string(last) + ")"),
      last_(last) {}

SpectralEstimate spectral_norm(const GraphFn& f, const Array& x, double tol, int max_iters, std::uint64_t seed) {
    if (!(tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be positive");
    if (max_iters < 1) throw std::invalid_argument("spectral_norm: max_iters must be >= 1");
    Rng rng(seed);
    Array v = randn(x.shape(), rng);
    v *= 1.0 / l2_norm(v);
    double sigma = 0.0, prev = -1.0, prev_change = -1.0;
    for (int it = 1; it <= max_iters; ++it) {
        const Array jv = jvp(f, x, v);
        // Rayleigh estimate ||J v|| for unit v
        sigma = l2_norm(jv);
        if (sigma == 0.0) return {0.0, it};
        if (prev >= 0.0) {
            const double change = std::abs(sigma - prev);
            // the changes shrink geometrically; bound what is still to come
            double remaining = change;
            if (prev_change > 0.0) {
                const double q = std::min(change / prev_change, 0.999);
                remaining = std::max(change, change * q / (1.0 - q));
            }
            if (change == 0.0 || (prev_change >= 0.0 && remaining < tol * sigma)) return {sigma, it};
            prev_change = change;
        }
        prev = sigma;
        Array w = vjp(f, x, jv);
        v = w * (1.0 / l2_norm(w));
    }
    throw SpectralNonConvergence(sigma, max_iters);
}

void IdealModelSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("IdealModelSpec: " + m); };
    if (depth < 2 || depth % 2 != 0) fail("depth must be even and >= 2");
    if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0, 1)");
    if (!(mix > 0.0 && mix < 1.0)) fail("mixing weight must lie in (0, 1)");
    if (!(delta_step >= 0.0)) fail("delta_step must be >= 0");
    if (!(eps_max > 0.0)) fail("eps_max must be > 0");
}

double ideal_layer_bound(double gamma, double mix, int l, int depth) {
    if (!(l > depth / 2 && l <= depth)) {
        throw std::out_of_range("ideal_layer_bound: layer " + std::to_string(l) + " outside the upper half of " +
                                std::to_string(depth));
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("ideal_layer_bound: gamma must lie in (0, 1)");
    if (!(mix > 0.0 && mix < 1.0)) throw std::invalid_argument("ideal_layer_bound: mixing weight must lie in (0, 1)");
    return (1.0 - mix) * gamma + mix * std::pow(gamma, 2 * l - depth);
}

IdealBounds ideal_model_bounds(const IdealModelSpec& spec) {
    spec.validate();
    const int L = spec.depth;
    double skip = std::pow(spec.gamma, L / 2);
    for (int l = L / 2 + 1; l <= L; ++l) skip *= ideal_layer_bound(spec.gamma, spec.mix, l, L);
    return {skip, std::pow(spec.gamma, L)};
}

double cumulative_error(double lip, double delta_step, long long T) {
    if (!(lip >= 0.0)) throw std::invalid_argument("cumulative_error: Lip must be >= 0");
    if (T < 1) throw std::invalid_argument("cumulative_error: T must be >= 1");
    if (lip == 1.0) return static_cast<double>(T) * delta_step;
    return std::expm1(static_cast<double>(T) * std::log1p(lip - 1.0)) / (lip - 1.0) * delta_step;
}

long long max_reuse_interval(double lip, double delta_step, double eps_max) {
    if (!(lip >= 0.0)) throw std::invalid_argument("max_reuse_interval: Lip must be >= 0");
    if (!(delta_step >= 0.0)) throw std::invalid_argument("max_reuse_interval: delta must be >= 0");
    if (!(eps_max > 0.0)) throw std::invalid_argument("max_reuse_interval: eps_max must be > 0");
    if (delta_step > eps_max) return 0;
    if (delta_step == 0.0) return kUnboundedReuse;
    if (lip < 1.0 && delta_step / (1.0 - lip) <= eps_max) return kUnboundedReuse;
    const double limit = eps_max * (1.0 + 1e-12);
    long long tau = 0;
    double err = 0.0;
    while (true) {
        const double next = lip * err + delta_step;
        if (next > limit) return tau;
        err = next;
        ++tau;
    }
}

namespace {

Array column(const Eigen::VectorXd& v) {
    return Array(Shape{static_cast<std::size_t>(v.size()), 1}, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

ChainReport empirical_theorem1_check(std::uint64_t seed, const ChainSpec& spec) {
    if (spec.depth < 2 || spec.depth % 2 != 0) throw std::invalid_argument("chain depth must be even and >= 2");
    if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) throw std::invalid_argument("chain gamma must lie in (0, 1)");
    if (!(spec.mix >= 0.0 && spec.mix < 1.0)) throw std::invalid_argument("chain mixing weight must lie in [0, 1)");
    const int L = spec.depth;
    const auto d = static_cast<std::size_t>(spec.width);
    Rng rng(mix_seed(seed, 0x7431));
    std::normal_distribution<double> nd(0.0, 1.0);

    std::vector<Array> weights;
    for (int l = 0; l < L; ++l) {
        Eigen::MatrixXd g = Eigen::MatrixXd::NullaryExpr(spec.width, spec.width, [&] { return nd(rng); });
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ();
        for (int c = 0; c < spec.width; ++c)
            if (qr.matrixQR()(c, c) < 0) q.col(c) *= -1.0;
        Array w(Shape{d, d});
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) w.at(r, c) = q(r, c);
        weights.push_back(std::move(w));
    }
    std::vector<double> scale(L, 1.0);
    auto layer = [&](int l, const Var& h) {
        Var y = ad::matmul(Var::constant(weights[l]), h);
        if (spec.nonlinearity != 0.0) y = ad::add(y, ad::scale(ad::gelu(h), spec.nonlinearity));
        return ad::scale(y, scale[l]);
    };

    Eigen::VectorXd x0(spec.width);
    for (int i = 0; i < spec.width; ++i) x0(i) = nd(rng);
    const Array x = column(x0);

    ChainReport rep;
    // rescale each layer at the point it sees in the plain chain
    Array h = x;
    for (int l = 0; l < L; ++l) {
        GraphFn f = [&, l](const Var& v) { return layer(l, v); };
        const double s = spectral_norm(f, h, 1e-10, 5000, mix_seed(seed, l)).sigma;
        if (!(s > 0.0) || !std::isfinite(s)) throw std::runtime_error("empirical_theorem1_check: rescaling failed");
        scale[l] = spec.gamma / s;
        rep.layer_sigma.push_back(spectral_norm(f, h, 1e-10, 5000, mix_seed(seed, l)).sigma);
        h = f(Var::constant(h)).value();
    }

    GraphFn vanilla = [&](const Var& in) {
        Var o = in;
        for (int l = 0; l < L; ++l) o = layer(l, o);
        return o;
    };
    GraphFn skip = [&](const Var& in) {
        std::vector<Var> out{in};  // out[l] = o_l
        for (int l = 1; l <= L; ++l) {
            Var input = out[l - 1];
            if (l > L / 2) input = ad::add(ad::scale(out[l - 1], 1.0 - spec.mix), ad::scale(out[L + 1 - l], spec.mix));
            out.push_back(layer(l - 1, input));
        }
        return out.back();
    };
    rep.sigma_vanilla = spectral_norm(vanilla, x, 1e-10, 5000, mix_seed(seed, 101)).sigma;
    rep.sigma_skip = spectral_norm(skip, x, 1e-10, 5000, mix_seed(seed, 102)).sigma;
    rep.gamma_pow_depth = std::pow(spec.gamma, L);
    rep.skip_below_vanilla = rep.sigma_skip < rep.sigma_vanilla;
    return rep;
}

}  // namespace skdt::stability
