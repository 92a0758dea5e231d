#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skdt/array.hpp"
#include "skdt/diffusion.hpp"
#include "skdt/metrics.hpp"
#include "skdt/model.hpp"

namespace skdt::trainer {

enum class DatasetKind { gaussian_blobs, bars, checker };
std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

/// Every class is a fixed template plus i.i.d. Gaussian pixel noise, so the
/// population is a Gaussian mixture with closed-form moments.
struct DatasetSpec {
    DatasetKind kind = DatasetKind::gaussian_blobs;
    int classes = 10;
    int image_size = 16;
    int channels = 1;
    double noise_std = 0.1;
    double blob_width = 0.12;   // blob std as a fraction of the image size
    double blob_radius = 0.28;  // distance of blob centres from the image centre, same unit
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sample {
    Array image;
    int label;
};

class SyntheticDataset {
   public:
    explicit SyntheticDataset(DatasetSpec spec);

    const DatasetSpec& spec() const { return spec_; }
    /// Deterministic in (spec.seed, index); label = index % classes.
    Sample sample(std::uint64_t index) const;
    const Array& class_template(int k) const { return templates_.at(k); }
    Shape image_shape() const;
    /// Mixture mean and covariance over flattened pixels.
    metrics::GaussianStats population_stats() const;

   private:
    DatasetSpec spec_;
    std::vector<Array> templates_;
};

SyntheticDataset make_synthetic_dataset(const DatasetSpec& spec);

enum class Stage { scratch, skip_only, full };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Optimizer: per-parameter RMS scaling with bias correction and no momentum,
/// theta -= lr * g / (sqrt(v / (1 - rho^k)) + eps), v <- rho v + (1 - rho) g^2.
struct TrainConfig {
    int steps = 2000;
    int batch = 16;
    double lr = 1e-3;
    double label_dropout = 0.1;
    std::uint64_t seed = 0;
    Stage stage = Stage::scratch;
    int eval_every = 0;  // checkpoint cadence in steps; 0 keeps none
    DatasetSpec dataset;
    double rms_decay = 0.999;
    double rms_eps = 1e-8;

    void validate() const;
};

struct BatchItem {
    Array x0;
    int label;  // after dropout
    int t;
    Array noise;
};

/// Batch for `step`, a pure function of (config, step).
std::vector<BatchItem> draw_batch(const TrainConfig& cfg, const SyntheticDataset& data,
                                  const diffusion::NoiseSchedule& sched, int step, int null_label);

struct Checkpoint {
    int step;
    ParamSet params;
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<Checkpoint> checkpoints;
    std::uint64_t null_labels = 0;
    std::uint64_t labels_drawn = 0;
};

class TrainingDiverged : public std::runtime_error {
   public:
    TrainingDiverged(int step, double loss);
    int step() const { return step_; }

   private:
    int step_;
};

using ProgressFn = std::function<void(int step, double loss)>;

/// Noise-prediction MSE with uniform timesteps.
TrainResult train(model::SkipDiT& model, const TrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                  const ProgressFn& progress = {});

/// Mean loss over `batches` draws of `cfg` batches, without updates.
double evaluate_loss(const model::SkipDiT& model, const TrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                     int batches);

enum class FusionInit {
    random,
    /// Least-squares fit of each branch to reproduce its deep input on
    /// features collected with the bypass switched on.
    passthrough_fit,
};
std::string to_string(FusionInit f);
FusionInit fusion_init_from_string(const std::string& s);

struct ContinualConfig {
    TrainConfig stage1;  // fusion branches only
    TrainConfig stage2;  // everything
    std::uint64_t fusion_seed = 0;
    FusionInit init = FusionInit::random;
    int continuity_window = 10;
};

/// Stage budgets split 1:3 from a total step count.
ContinualConfig default_continual_config(const TrainConfig& base, int total_steps);

struct ContinualResult {
    model::SkipDiT model;
    TrainResult stage1;
    TrainResult stage2;
    std::uint64_t vanilla_block_hash = 0;
    std::uint64_t pre_stage1_block_hash = 0;
    std::uint64_t post_stage1_block_hash = 0;
    /// Max |skip with bypass - vanilla| over probe inputs before stage 1.
    double pre_stage_max_diff = 0.0;
    /// Mean of the first `continuity_window` stage-2 losses over the mean of
    /// the last window of stage 1.
    double continuity_ratio = 0.0;
};

/// Hash of every non-fusion parameter.
std::uint64_t block_hash(const ParamSet& params);

ContinualResult two_stage_continual(const model::SkipDiT& vanilla, const model::ModelConfig& skip_cfg,
                                    const ContinualConfig& cfg, const diffusion::NoiseSchedule& sched,
                                    const ProgressFn& progress = {});

/// Orthonormal rows (out_dim x input_dim) drawn from `seed`.
Eigen::MatrixXd random_projection(std::size_t input_dim, std::size_t out_dim, std::uint64_t seed);

struct FidConfig {
    int n_samples = 256;
    diffusion::SamplerConfig sampler{diffusion::SamplerKind::ddim, 20, 1.0, 0};
    std::size_t proj_dim = 16;  // 0 keeps raw pixels
    std::uint64_t seed = 0;
};

/// Frechet distance between the fitted Gaussian of `samples` and the dataset
/// population, both after the fixed projection.
double toy_fid_from_samples(const std::vector<Array>& samples, const SyntheticDataset& data, std::size_t proj_dim,
                            std::uint64_t proj_seed);

/// Generates n_samples (label i % classes) and scores them.
std::vector<Array> generate_samples(const model::SkipDiT& model, const FidConfig& cfg,
                                    const diffusion::NoiseSchedule& sched);
double toy_fid_eval(const model::SkipDiT& model, const SyntheticDataset& data, const FidConfig& cfg,
                    const diffusion::NoiseSchedule& sched);

struct ConvergenceCurve {
    std::vector<int> steps;
    std::vector<double> fid;
    std::vector<double> losses;
    ParamSet final_params;
};

ConvergenceCurve convergence_curve(const model::ModelConfig& mcfg, const TrainConfig& tcfg, const FidConfig& fcfg,
                                   const diffusion::NoiseSchedule& sched, std::uint64_t seed);

struct PairedRun {
    std::uint64_t seed;
    ConvergenceCurve vanilla;
    ConvergenceCurve skip;
    int skip_steps_to_target = -1;  // first checkpoint where skip <= vanilla's final score
    bool skip_reached = false;
};

std::vector<PairedRun> convergence_compare(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                           const FidConfig& fcfg, const diffusion::NoiseSchedule& sched,
                                           const std::vector<std::uint64_t>& seeds);

}  // namespace skdt::trainer
