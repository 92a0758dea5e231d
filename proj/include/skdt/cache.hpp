#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "skdt/diffusion.hpp"
#include "skdt/model.hpp"

namespace skdt::cache {

/// Inputs of the skip-cached sampler.
struct CachePlan {
    int interval = 2;  // N; 1 disables caching
    int t_hi = 0;      // cached window, inclusive on both ends
    int t_lo = 0;
    std::vector<double> error_record;  // R(t) at [t - 1]
    std::set<int> phase;               // timesteps forced to full inference
    double threshold = std::numeric_limits<double>::infinity();
    int level = 1;  // skip branch bracketing the cached region

    void validate(int T, int depth) const;
    bool in_window(int t) const { return t <= t_hi && t >= t_lo; }
};

/// Window [round(0.70 T), round(0.05 T)], zero error record, no phase, no threshold.
CachePlan default_plan(const diffusion::NoiseSchedule& sched, int interval);

/// 3 x mean R over the window.
double default_threshold(const CachePlan& plan);

enum class StepKind { full, global, local };
std::string to_string(StepKind k);

struct StepDecision {
    int t;
    StepKind kind;
    double error;  // accumulated error after the decision
};

/// Which steps reuse the cache. Before a local step at t the accumulated error
/// grows by R(t); if t is in the phase or the grown error exceeds the
/// threshold the step is promoted to a global one and the error resets.
std::vector<StepDecision> plan_schedule(const CachePlan& plan, const std::vector<int>& timesteps);

struct BlockEvalCount {
    std::uint64_t full_steps = 0;  // full and global steps
    std::uint64_t cached_steps = 0;
    std::uint64_t block_evals = 0;
    std::uint64_t fusion_evals = 0;
    double speedup = 1.0;  // uncached block evals / block_evals
};

/// Analytic cost for one guidance branch: full steps cost `depth` blocks and
/// depth/2 fusions, cached steps 2 * level blocks and level fusions.
BlockEvalCount count_block_evals(const CachePlan& plan, const std::vector<int>& timesteps, int depth);

/// Number of model branches evaluated per step under guidance `scale`.
int guidance_branches(double scale);

/// Per-step record of a sampling run: the x_t fed to each step and the noise
/// prediction the update consumed.
struct SampleTrace {
    std::vector<Array> inputs;
    std::vector<Array> predictions;
};

struct CacheRunReport {
    model::EvalCounter counter;
    std::vector<StepDecision> decisions;
};

/// Skip-cached sampling. Each guidance branch keeps its own deep feature.
Array cached_sample(const model::SkipDiT& model, const Array& x_T, int label, const CachePlan& plan,
                    const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched,
                    CacheRunReport* report = nullptr, SampleTrace* trace = nullptr);

/// Reference sampler with block counting; identical arithmetic to diffusion::sample.
Array uncached_sample(const model::SkipDiT& model, const Array& x_T, int label, const diffusion::SamplerConfig& cfg,
                      const diffusion::NoiseSchedule& sched, model::EvalCounter* counter = nullptr,
                      SampleTrace* trace = nullptr);

/// Evaluates the model on every n-th step and reuses its noise prediction in between.
Array static_interval_baseline(const model::SkipDiT& model, const Array& x_T, int label, int n,
                               const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched,
                               model::EvalCounter* counter = nullptr, SampleTrace* trace = nullptr);

std::uint64_t baseline_block_evals(int steps, int n, int depth);

/// Step indices refreshed by an evenly spread static schedule with `evals`
/// model evaluations: floor(i * steps / evals) for i < evals. Step 0 is always
/// included.
std::vector<bool> even_refresh_steps(int steps, int evals);

/// Reuses the last noise prediction on every step not marked in `refresh`.
Array static_schedule_baseline(const model::SkipDiT& model, const Array& x_T, int label,
                               const std::vector<bool>& refresh, const diffusion::SamplerConfig& cfg,
                               const diffusion::NoiseSchedule& sched, model::EvalCounter* counter = nullptr,
                               SampleTrace* trace = nullptr);

/// Smallest evaluation count whose cost is >= `budget`, capped at `steps`.
/// Unlike a fixed interval this matches any budget to within one step.
int baseline_evals_for_budget(int steps, int depth, std::uint64_t budget);

/// Largest n whose baseline cost is still >= `budget`, so the baseline never
/// runs on fewer block evaluations than the plan it is compared with.
int baseline_interval_for_budget(int steps, int depth, std::uint64_t budget);

struct CalibrationSample {
    Array x_T;
    int label = 0;
};

/// Deep features (output of block L - level) of the branch that drives the
/// trajectory, one per sampler step, from an uncached run.
std::vector<Array> deep_feature_trace(const model::SkipDiT& model, const CalibrationSample& s, int level,
                                      const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched);

/// Mean over samples of 1 - cos(C_k, C_{k-1}) per sampler step; entry 0 is 0.
std::vector<double> step_feature_change(const model::SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                        int level, const diffusion::SamplerConfig& cfg,
                                        const diffusion::NoiseSchedule& sched);

/// R over 1..T: the change measured at step k covers t_k <= t < t_{k-1}.
std::vector<double> spread_error_record(const std::vector<int>& timesteps, const std::vector<double>& step_change,
                                        int T);

std::vector<double> calibrate_error_record(const model::SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                           const diffusion::SamplerConfig& cfg,
                                           const diffusion::NoiseSchedule& sched, int level = 1);

/// Top round(q * n) timesteps by delta; ties go to the larger timestep.
std::set<int> select_phase(const std::vector<int>& timesteps, const std::vector<double>& deltas, double q);

/// Phase from the per-step deep-feature change; the first step, which has no
/// predecessor, inherits the second step's change.
std::set<int> detect_dynamic_phase(const model::SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                   double q, const diffusion::SamplerConfig& cfg,
                                   const diffusion::NoiseSchedule& sched, int level = 1);

struct FeatureHeatmap {
    std::vector<int> timesteps;          // the later step of each column
    std::vector<std::vector<double>> d;  // [layer - 1][column]
};

/// Entry (l, k) = 1 - cos(block l output at step k + 1, at step k).
FeatureHeatmap feature_heatmap(const model::SkipDiT& model, const CalibrationSample& s,
                               const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched);

struct LevelSimilarity {
    int level;
    double similarity;
};

struct LevelSelection {
    int level;
    std::vector<LevelSimilarity> table;
};

std::vector<int> candidate_levels(int depth);

/// Mean cosine similarity of each candidate level's cached feature across
/// consecutive steps; the most stable level wins, ties to the smaller level.
LevelSelection select_skip_level(const model::SkipDiT& model, const std::vector<CalibrationSample>& samples,
                                 const diffusion::SamplerConfig& cfg, const diffusion::NoiseSchedule& sched);

void write_error_record_csv(std::ostream& os, const std::vector<double>& R);
std::vector<double> read_error_record_csv(std::istream& is);
void write_heatmap_csv(std::ostream& os, const FeatureHeatmap& h);

/// JSON round trip. The error record is inlined unless `record_path` is given,
/// in which case only the path is written.
std::string plan_to_json(const CachePlan& plan, const std::string& record_path = "");
/// `base_dir` resolves a relative record path.
CachePlan plan_from_json(const std::string& text, const std::string& base_dir = ".");

}  // namespace skdt::cache
