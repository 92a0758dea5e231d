#include "skdt/cache.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "skdt/metrics.hpp"

namespace skdt::cache {

using diffusion::NoiseSchedule;
using diffusion::SamplerConfig;
using model::EvalCounter;
using model::SkipDiT;
using nlohmann::json;

void CachePlan::validate(int T, int depth) const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("CachePlan: " + m); };
    if (interval < 1) fail("interval must be >= 1");
    if (!(t_hi > t_lo)) fail("window needs t_hi > t_lo");
    if (t_lo < 1 || t_hi > T) {
        fail("window [" + std::to_string(t_hi) + ", " + std::to_string(t_lo) + "] outside schedule 1.." +
             std::to_string(T));
    }
    if (static_cast<int>(error_record.size()) != T) fail("error record length must equal T");
    for (double r : error_record)
        if (!(r >= 0.0)) fail("error record entries must be non-negative");
    for (int t : phase)
        if (t < 1 || t > T) fail("phase timestep " + std::to_string(t) + " outside schedule");
    if (!(threshold >= 0.0)) fail("threshold must be non-negative");
    if (level < 1 || level > depth / 2) fail("level must lie in 1..L/2");
}

CachePlan default_plan(const NoiseSchedule& sched, int interval) {
    CachePlan p;
    p.interval = interval;
    p.t_hi = std::max(2, static_cast<int>(std::lround(0.70 * sched.T)));
    p.t_lo = std::max(1, static_cast<int>(std::lround(0.05 * sched.T)));
    if (p.t_lo >= p.t_hi) p.t_lo = p.t_hi - 1;
    p.error_record.assign(sched.T, 0.0);
    return p;
}

double default_threshold(const CachePlan& plan) {
    double sum = 0.0;
    int n = 0;
    for (int t = plan.t_lo; t <= plan.t_hi; ++t) {
        sum += plan.error_record.at(t - 1);
        ++n;
    }
    return n ? 3.0 * sum / n : 0.0;
}

std::string to_string(StepKind k) {
    switch (k) {
        case StepKind::full: return "full";
        case StepKind::global: return "global";
        case StepKind::local: return "local";
    }
    return "?";
}

std::vector<StepDecision> plan_schedule(const CachePlan& plan, const std::vector<int>& timesteps) {
    std::vector<StepDecision> out;
    out.reserve(timesteps.size());
    bool cached = false;
    int locals = 0;
    double err = 0.0;
    for (int t : timesteps) {
        if (plan.interval == 1 || !plan.in_window(t)) {
            cached = false;
            err = 0.0;
            out.push_back({t, StepKind::full, err});
            continue;
        }
        if (cached && locals < plan.interval - 1) {
            const double grown = err + plan.error_record.at(t - 1);
            if (!plan.phase.count(t) && !(grown > plan.threshold)) {
                err = grown;
                ++locals;
                out.push_back({t, StepKind::local, err});
                continue;
            }
        }
        cached = true;
        locals = 0;
        err = 0.0;
        out.push_back({t, StepKind::global, err});
    }
    return out;
}

BlockEvalCount count_block_evals(const CachePlan& plan, const std::vector<int>& timesteps, int depth) {
    BlockEvalCount c;
    for (const auto& d : plan_schedule(plan, timesteps)) {
        if (d.kind == StepKind::local) {
            ++c.cached_steps;
            c.block_evals += 2 * plan.level;
            c.fusion_evals += plan.level;
        } else {
            ++c.full_steps;
            c.block_evals += depth;
            c.fusion_evals += depth / 2;
        }
    }
    const double uncached = static_cast<double>(timesteps.size()) * depth;
    c.speedup = c.block_evals ? uncached / static_cast<double>(c.block_evals) : 1.0;
    return c;
}

int guidance_branches(double scale) { return scale == 1.0 || scale == 0.0 ? 1 : 2; }

namespace {

// Labels evaluated per step, null branch first when both run.
std::vector<int> branch_labels(const SkipDiT& m, int label, double scale) {
    if (!(scale >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
    diffusion::check_label(m, label);
    if (scale == 1.0) return {label};
    if (scale == 0.0) return {m.null_label()};
    return {m.null_label(), label};
}

Array combine(const std::vector<Array>& eps, double scale) {
    return eps.size() == 1 ? eps[0] : diffusion::cfg_combine(eps[0], eps[1], scale);
}

Array traced_run(const SamplerConfig& cfg, const NoiseSchedule& sched, const Array& x_T, const diffusion::EpsFn& eps,
                 SampleTrace* trace) {
    Rng rng = diffusion::sampler_rng(cfg.seed);
    if (!trace) return diffusion::run_sampler(cfg, sched, x_T, eps, rng);
    auto recorded = [&](const Array& x, int t, std::size_t k) {
        Array e = eps(x, t, k);
        trace->inputs.push_back(x);
        trace->predictions.push_back(e);
        return e;
    };
    return diffusion::run_sampler(cfg, sched, x_T, recorded, rng);
}

// Index of the branch whose features describe the trajectory.
std::size_t primary_branch(const std::vector<int>& labels) { return labels.size() - 1; }

}  // namespace

Array cached_sample(const SkipDiT& model, const Array& x_T, int label, const CachePlan& plan, const SamplerConfig& cfg,
                    const NoiseSchedule& sched, CacheRunReport* report, SampleTrace* trace) {
    if (model.config().variant != model::Variant::skip) throw std::logic_error("cached_sample: requires the skip variant");
    if (model.bypass()) throw std::logic_error("cached_sample: fusion bypass must be off");
    plan.validate(sched.T, model.config().depth);
    const std::vector<int> labels = branch_labels(model, label, cfg.cfg_scale);
    const std::vector<int> ts = diffusion::sampler_timesteps(cfg, sched);
    const std::vector<StepDecision> decisions = plan_schedule(plan, ts);

    EvalCounter local_counter;
    EvalCounter* counter = report ? &report->counter : &local_counter;
    std::vector<Array> deep(labels.size());
    auto eps = [&](const Array& x, int t, std::size_t k) {
        std::vector<Array> e;
        for (std::size_t b = 0; b < labels.size(); ++b) {
            switch (decisions[k].kind) {
                case StepKind::full: e.push_back(model.predict_counted(x, t, labels[b], counter)); break;
                case StepKind::global:
                    e.push_back(model.predict_caching(x, t, labels[b], plan.level, deep[b], counter));
                    break;
                case StepKind::local:
                    e.push_back(model.predict_cached(x, t, labels[b], plan.level, deep[b], counter));
                    break;
            }
        }
        return combine(e, cfg.cfg_scale);
    };
    Array out = traced_run(cfg, sched, x_T, eps, trace);
    if (report) report->decisions = decisions;
    return out;
}

Array uncached_sample(const SkipDiT& model, const Array& x_T, int label, const SamplerConfig& cfg,
                      const NoiseSchedule& sched, EvalCounter* counter, SampleTrace* trace) {
    const std::vector<int> labels = branch_labels(model, label, cfg.cfg_scale);
    auto eps = [&](const Array& x, int t, std::size_t) {
        std::vector<Array> e;
        for (int l : labels) e.push_back(model.predict_counted(x, t, l, counter));
        return combine(e, cfg.cfg_scale);
    };
    return traced_run(cfg, sched, x_T, eps, trace);
}

Array static_interval_baseline(const SkipDiT& model, const Array& x_T, int label, int n, const SamplerConfig& cfg,
                               const NoiseSchedule& sched, EvalCounter* counter, SampleTrace* trace) {
    if (n < 1) throw std::invalid_argument("static_interval_baseline: n must be >= 1");
    const int steps = static_cast<int>(diffusion::sampler_timesteps(cfg, sched).size());
    std::vector<bool> refresh(steps);
    for (int k = 0; k < steps; ++k) refresh[k] = k % n == 0;
    return static_schedule_baseline(model, x_T, label, refresh, cfg, sched, counter, trace);
}

std::vector<bool> even_refresh_steps(int steps, int evals) {
    if (steps < 1 || evals < 1 || evals > steps) {
        throw std::invalid_argument("even_refresh_steps: need 1 <= evals <= steps");
    }
    std::vector<bool> out(steps, false);
    for (long long i = 0; i < evals; ++i) out[static_cast<std::size_t>(i * steps / evals)] = true;
    return out;
}

Array static_schedule_baseline(const SkipDiT& model, const Array& x_T, int label, const std::vector<bool>& refresh,
                               const SamplerConfig& cfg, const NoiseSchedule& sched, EvalCounter* counter,
                               SampleTrace* trace) {
    if (refresh.size() != diffusion::sampler_timesteps(cfg, sched).size() || refresh.empty() || !refresh[0]) {
        throw std::invalid_argument("static baseline: refresh mask must cover every step and start with a refresh");
    }
    const std::vector<int> labels = branch_labels(model, label, cfg.cfg_scale);
    Array stored;
    auto eps = [&](const Array& x, int t, std::size_t k) {
        if (refresh[k]) {
            std::vector<Array> e;
            for (int l : labels) e.push_back(model.predict_counted(x, t, l, counter));
            stored = combine(e, cfg.cfg_scale);
        }
        return stored;
    };
    return traced_run(cfg, sched, x_T, eps, trace);
}

std::uint64_t baseline_block_evals(int steps, int n, int depth) {
    if (n < 1 || steps < 0 || depth < 0) throw std::invalid_argument("baseline_block_evals: bad arguments");
    return static_cast<std::uint64_t>((steps + n - 1) / n) * static_cast<std::uint64_t>(depth);
}

int baseline_evals_for_budget(int steps, int depth, std::uint64_t budget) {
    if (steps < 1 || depth < 1) throw std::invalid_argument("baseline_evals_for_budget: bad arguments");
    const std::uint64_t d = static_cast<std::uint64_t>(depth);
    const std::uint64_t evals = std::max<std::uint64_t>(1, (budget + d - 1) / d);
    return static_cast<int>(std::min<std::uint64_t>(evals, static_cast<std::uint64_t>(steps)));
}

int baseline_interval_for_budget(int steps, int depth, std::uint64_t budget) {
    int best = 1;
    for (int n = 1; n <= steps; ++n)
        if (baseline_block_evals(steps, n, depth) >= budget) best = n;
    return best;
}

namespace {

// Drives an uncached trajectory and hands the primary branch's instrumented
// output of every step to `visit`.
template <typename Visit>
void instrumented_run(const SkipDiT& model, const CalibrationSample& s, const SamplerConfig& cfg,
                      const NoiseSchedule& sched, Visit visit) {
    const std::vector<int> labels = branch_labels(model, s.label, cfg.cfg_scale);
    const std::size_t primary = primary_branch(labels);
    auto eps = [&](const Array& x, int t, std::size_t k) {
        std::vector<Array> e;
        for (std::size_t b = 0; b < labels.size(); ++b) {
            if (b == primary) {
                model::InstrumentedOutput io = model.forward_instrumented(x, t, labels[b]);
                e.push_back(io.prediction);
                visit(k, t, io);
            } else {
                e.push_back(model.predict(x, t, labels[b]));
            }
        }
        return combine(e, cfg.cfg_scale);
    };
    Rng rng = diffusion::sampler_rng(cfg.seed);
    diffusion::run_sampler(cfg, sched, s.x_T, eps, rng);
}

void check_level(const SkipDiT& model, int level) {
    if (level < 1 || level > model.config().depth / 2) throw std::out_of_range("cache level " + std::to_string(level));
}

}  // namespace

std::vector<Array> deep_feature_trace(const SkipDiT& model, const CalibrationSample& s, int level,
                                      const SamplerConfig& cfg, const NoiseSchedule& sched) {
    check_level(model, level);
    std::vector<Array> out;
    const int block = model.config().depth - level;
    instrumented_run(model, s, cfg, sched, [&](std::size_t, int, const model::InstrumentedOutput& io) {
        out.push_back(io.block_outputs[block - 1]);
    });
    return out;
}

std::vector<double> step_feature_change(const SkipDiT& model, const std::vector<CalibrationSample>& samples, int level,
                                        const SamplerConfig& cfg, const NoiseSchedule& sched) {
    if (samples.empty()) throw std::invalid_argument("calibration needs at least one sample");
    const std::size_t steps = diffusion::sampler_timesteps(cfg, sched).size();
    std::vector<double> change(steps, 0.0);
    for (const auto& s : samples) {
        const std::vector<Array> trace = deep_feature_trace(model, s, level, cfg, sched);
        for (std::size_t k = 1; k < steps; ++k) {
            change[k] += std::max(0.0, 1.0 - metrics::cosine_similarity(trace[k], trace[k - 1]));
        }
    }
    for (double& v : change) v /= static_cast<double>(samples.size());
    return change;
}

std::vector<double> spread_error_record(const std::vector<int>& timesteps, const std::vector<double>& step_change,
                                        int T) {
    if (timesteps.size() != step_change.size()) throw std::invalid_argument("spread_error_record: length mismatch");
    std::vector<double> R(T, 0.0);
    for (std::size_t k = 1; k < timesteps.size(); ++k) {
        for (int t = timesteps[k]; t < timesteps[k - 1]; ++t) R.at(t - 1) = step_change[k];
    }
    return R;
}

std::vector<double> calibrate_error_record(const SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                           const SamplerConfig& cfg, const NoiseSchedule& sched, int level) {
    const auto change = step_feature_change(model, samples, level, cfg, sched);
    return spread_error_record(diffusion::sampler_timesteps(cfg, sched), change, sched.T);
}

std::set<int> select_phase(const std::vector<int>& timesteps, const std::vector<double>& deltas, double q) {
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("phase quantile must lie in [0, 1]");
    if (timesteps.size() != deltas.size()) throw std::invalid_argument("select_phase: length mismatch");
    std::vector<std::size_t> order(timesteps.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (deltas[a] != deltas[b]) return deltas[a] > deltas[b];
        return timesteps[a] > timesteps[b];
    });
    const auto keep = static_cast<std::size_t>(std::lround(q * static_cast<double>(timesteps.size())));
    std::set<int> out;
    for (std::size_t i = 0; i < keep; ++i) out.insert(timesteps[order[i]]);
    return out;
}

std::set<int> detect_dynamic_phase(const SkipDiT& model, const std::vector<CalibrationSample>& samples, double q,
                                   const SamplerConfig& cfg, const NoiseSchedule& sched, int level) {
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("phase quantile must lie in [0, 1]");
    std::vector<double> change = step_feature_change(model, samples, level, cfg, sched);
    if (change.size() > 1) change[0] = change[1];
    return select_phase(diffusion::sampler_timesteps(cfg, sched), change, q);
}

FeatureHeatmap feature_heatmap(const SkipDiT& model, const CalibrationSample& s, const SamplerConfig& cfg,
                               const NoiseSchedule& sched) {
    const int L = model.config().depth;
    FeatureHeatmap h;
    h.d.assign(L, {});
    std::vector<Array> prev;
    instrumented_run(model, s, cfg, sched, [&](std::size_t k, int t, const model::InstrumentedOutput& io) {
        if (k > 0) {
            h.timesteps.push_back(t);
            for (int l = 0; l < L; ++l) {
                h.d[l].push_back(1.0 - metrics::cosine_similarity(io.block_outputs[l], prev[l]));
            }
        }
        prev = io.block_outputs;
    });
    return h;
}

std::vector<int> candidate_levels(int depth) {
    std::vector<int> out;
    for (int i = 1; i <= 3 && i <= depth / 2; ++i) out.push_back(i);
    return out;
}

LevelSelection select_skip_level(const SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                 const SamplerConfig& cfg, const NoiseSchedule& sched) {
    if (model.config().variant != model::Variant::skip) throw std::logic_error("select_skip_level: requires the skip variant");
    if (samples.empty()) throw std::invalid_argument("select_skip_level: no samples");
    const int L = model.config().depth;
    const std::vector<int> levels = candidate_levels(L);
    std::vector<double> sum(levels.size(), 0.0);
    std::size_t pairs = 0;
    for (const auto& s : samples) {
        std::vector<Array> prev;
        instrumented_run(model, s, cfg, sched, [&](std::size_t k, int, const model::InstrumentedOutput& io) {
            std::vector<Array> cur;
            for (int i : levels) cur.push_back(io.block_outputs[L - i - 1]);
            if (k > 0) {
                for (std::size_t j = 0; j < levels.size(); ++j) sum[j] += metrics::cosine_similarity(cur[j], prev[j]);
                ++pairs;
            }
            prev = std::move(cur);
        });
    }
    LevelSelection sel{levels.front(), {}};
    double best = -2.0;
    for (std::size_t j = 0; j < levels.size(); ++j) {
        const double sim = pairs ? sum[j] / static_cast<double>(pairs) : 1.0;
        sel.table.push_back({levels[j], sim});
        if (sim > best) {
            best = sim;
            sel.level = levels[j];
        }
    }
    return sel;
}

void write_error_record_csv(std::ostream& os, const std::vector<double>& R) {
    os << "t,R\n" << std::setprecision(17);
    for (std::size_t i = 0; i < R.size(); ++i) os << i + 1 << ',' << R[i] << '\n';
}

std::vector<double> read_error_record_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "t,R") throw std::runtime_error("error record CSV: missing 't,R' header");
    std::vector<double> R;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("error record CSV: malformed row '" + line + "'");
        const int t = std::stoi(line.substr(0, comma));
        if (t != static_cast<int>(R.size()) + 1) throw std::runtime_error("error record CSV: rows out of order");
        R.push_back(std::stod(line.substr(comma + 1)));
    }
    return R;
}

void write_heatmap_csv(std::ostream& os, const FeatureHeatmap& h) {
    os << "layer";
    for (int t : h.timesteps) os << ",t" << t;
    os << '\n' << std::setprecision(17);
    for (std::size_t l = 0; l < h.d.size(); ++l) {
        os << l + 1;
        for (double v : h.d[l]) os << ',' << v;
        os << '\n';
    }
}

std::string plan_to_json(const CachePlan& plan, const std::string& record_path) {
    json j;
    j["interval"] = plan.interval;
    j["t_hi"] = plan.t_hi;
    j["t_lo"] = plan.t_lo;
    j["level"] = plan.level;
    j["threshold"] = std::isinf(plan.threshold) ? json("inf") : json(plan.threshold);
    j["phase"] = std::vector<int>(plan.phase.rbegin(), plan.phase.rend());
    if (record_path.empty()) {
        j["error_record"] = plan.error_record;
    } else {
        j["error_record_path"] = record_path;
    }
    return j.dump(2);
}

CachePlan plan_from_json(const std::string& text, const std::string& base_dir) {
    const json j = json::parse(text);
    CachePlan p;
    p.interval = j.at("interval").get<int>();
    p.t_hi = j.at("t_hi").get<int>();
    p.t_lo = j.at("t_lo").get<int>();
    p.level = j.value("level", 1);
    if (j.contains("threshold")) {
        const json& th = j["threshold"];
        p.threshold = th.is_string() && th.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                       : th.get<double>();
    }
    if (j.contains("phase")) {
        for (int t : j["phase"].get<std::vector<int>>()) p.phase.insert(t);
    }
    if (j.contains("error_record")) {
        p.error_record = j["error_record"].get<std::vector<double>>();
    } else if (j.contains("error_record_path")) {
        std::filesystem::path path = j["error_record_path"].get<std::string>();
        if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open error record '" + path.string() + "'");
        p.error_record = read_error_record_csv(in);
    }
    return p;
}

}  // namespace skdt::cache
