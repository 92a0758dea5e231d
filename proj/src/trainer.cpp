#include "skdt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "skdt/parallel.hpp"
#include "skdt/random.hpp"

namespace skdt::trainer {

namespace {

constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr std::uint64_t kProbeStream = 0x9b0e;
constexpr std::uint64_t kSampleStream = 0x5a3f;

std::string join_kinds() { return "gaussian-blobs, bars, checker"; }

Array blob_template(const DatasetSpec& s, int k) {
    const double n = s.image_size;
    const double theta = 2.0 * std::numbers::pi * k / s.classes;
    const double cx = 0.5 * n + s.blob_radius * n * std::cos(theta);
    const double cy = 0.5 * n + s.blob_radius * n * std::sin(theta);
    const double w = s.blob_width * n;
    Array out(Shape{static_cast<std::size_t>(s.channels), static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    std::size_t idx = 0;
    for (int c = 0; c < s.channels; ++c) {
        for (int i = 0; i < s.image_size; ++i) {
            for (int j = 0; j < s.image_size; ++j) {
                const double dy = i + 0.5 - cy, dx = j + 0.5 - cx;
                out[idx++] = -1.0 + 2.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
            }
        }
    }
    return out;
}

// Even classes are vertical stripes, odd classes horizontal; width grows with k / 2.
Array bars_template(const DatasetSpec& s, int k) {
    const int width = 1 + k / 2;
    const bool vertical = k % 2 == 0;
    const auto n = static_cast<std::size_t>(s.image_size);
    Array out(Shape{static_cast<std::size_t>(s.channels), n, n});
    std::size_t idx = 0;
    for (int c = 0; c < s.channels; ++c) {
        for (int i = 0; i < s.image_size; ++i) {
            for (int j = 0; j < s.image_size; ++j) {
                const int coord = vertical ? j : i;
                out[idx++] = (coord / width) % 2 == 0 ? 1.0 : -1.0;
            }
        }
    }
    return out;
}

// Cell size 1 + k % 5; classes 5..9 flip the parity.
Array checker_template(const DatasetSpec& s, int k) {
    const int cell = 1 + k % 5;
    const int phase = k / 5;
    const auto n = static_cast<std::size_t>(s.image_size);
    Array out(Shape{static_cast<std::size_t>(s.channels), n, n});
    std::size_t idx = 0;
    for (int c = 0; c < s.channels; ++c) {
        for (int i = 0; i < s.image_size; ++i) {
            for (int j = 0; j < s.image_size; ++j) {
                out[idx++] = (i / cell + j / cell + phase) % 2 == 0 ? 1.0 : -1.0;
            }
        }
    }
    return out;
}

Eigen::Map<const Eigen::VectorXd> as_vector(const Array& a) {
    return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

Var item_loss(const model::SkipDiT& model, const model::Bindings& b, const BatchItem& item,
              const diffusion::NoiseSchedule& sched) {
    const Array x_t = diffusion::q_sample(item.x0, item.t, item.noise, sched);
    Var pred = model.forward(b, Var::constant(x_t), item.t, item.label);
    Var diff = ad::sub(pred, Var::constant(item.noise));
    return ad::mean(ad::mul(diff, diff));
}

Var batch_loss(const model::SkipDiT& model, const model::Bindings& b, const std::vector<BatchItem>& batch,
               const diffusion::NoiseSchedule& sched) {
    Var total;
    for (const auto& item : batch) {
        Var l = item_loss(model, b, item, sched);
        total = total.valid() ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

std::set<std::string> trainable_names(const model::SkipDiT& model, Stage stage) {
    return model::freeze_mask(model, stage == Stage::skip_only ? model::FreezeMode::skip_only : model::FreezeMode::all);
}

void check_model_data(const model::SkipDiT& model, const DatasetSpec& d) {
    const auto& mc = model.config();
    if (mc.image_size != d.image_size || mc.channels != d.channels) {
        throw std::invalid_argument("train: dataset images do not match the model input shape");
    }
    if (mc.num_classes != d.classes) throw std::invalid_argument("train: dataset class count differs from the model");
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t count) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + count; ++i) s += v[i];
    return s / static_cast<double>(count);
}

// Least-squares fusion weights mapping Norm(shallow ++ deep) back to deep.
void fit_passthrough(model::SkipDiT& skip, const TrainConfig& data_cfg, const diffusion::NoiseSchedule& sched,
                     const SyntheticDataset& data) {
    const auto& mc = skip.config();
    const int L = mc.depth, half = L / 2;
    const auto d = static_cast<Eigen::Index>(mc.hidden);
    const auto tokens = static_cast<Eigen::Index>(mc.tokens());

    skip.set_bypass(true);
    // eight rows per unknown of each output column
    const auto wanted = static_cast<std::size_t>((8 * (2 * d + 1) + tokens - 1) / tokens);
    std::vector<BatchItem> probe;
    for (int k = 0; probe.size() < wanted; ++k) {
        for (auto& item : draw_batch(data_cfg, data, sched, -1000 - k, skip.null_label())) probe.push_back(std::move(item));
    }
    std::vector<Eigen::MatrixXd> design(half), target(half);
    const Eigen::Index rows = tokens * static_cast<Eigen::Index>(probe.size());
    for (int i = 0; i < half; ++i) {
        design[i].resize(rows, 2 * d + 1);
        target[i].resize(rows, d);
    }
    for (std::size_t s = 0; s < probe.size(); ++s) {
        const Array x_t = diffusion::q_sample(probe[s].x0, probe[s].t, probe[s].noise, sched);
        const model::InstrumentedOutput io = skip.forward_instrumented(x_t, probe[s].t, probe[s].label);
        for (int i = 1; i <= half; ++i) {
            const Array& shallow = io.block_outputs[i - 1];
            const Array& deep = io.block_outputs[L - i - 1];
            const Array joined = primitive_forward(OpId::concat, std::vector<Array>{shallow, deep});
            const Array normed = primitive_forward(OpId::layer_norm, std::vector<Array>{joined});
            for (Eigen::Index r = 0; r < tokens; ++r) {
                const Eigen::Index row = static_cast<Eigen::Index>(s) * tokens + r;
                for (Eigen::Index c = 0; c < 2 * d; ++c) design[i - 1](row, c) = normed.at(r, c);
                design[i - 1](row, 2 * d) = 1.0;
                for (Eigen::Index c = 0; c < d; ++c) target[i - 1](row, c) = deep.at(r, c);
            }
        }
    }
    skip.set_bypass(false);

    ParamSet& ps = skip.mutable_params();
    for (int i = 1; i <= half; ++i) {
        const Eigen::MatrixXd& A = design[i - 1];
        // small ridge keeps the normal equations well posed when rows < columns
        Eigen::MatrixXd gram = A.transpose() * A;
        gram.diagonal().array() += 1e-6 * std::max(1.0, gram.diagonal().mean());
        const Eigen::MatrixXd sol = gram.ldlt().solve(A.transpose() * target[i - 1]);
        const std::string p = model::skip_prefix(i);
        Array& w = ps.get(p + "linear.w");
        Array& b = ps.get(p + "linear.b");
        for (Eigen::Index r = 0; r < 2 * d; ++r)
            for (Eigen::Index c = 0; c < d; ++c) w.at(r, c) = sol(r, c);
        for (Eigen::Index c = 0; c < d; ++c) b[c] = sol(2 * d, c);
        if (mc.fusion_norm_affine) {
            for (auto& v : ps.get(p + "norm.g").values()) v = 1.0;
            for (auto& v : ps.get(p + "norm.b").values()) v = 0.0;
        }
    }
}

}  // namespace

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::gaussian_blobs: return "gaussian-blobs";
        case DatasetKind::bars: return "bars";
        case DatasetKind::checker: return "checker";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "gaussian-blobs") return DatasetKind::gaussian_blobs;
    if (s == "bars") return DatasetKind::bars;
    if (s == "checker") return DatasetKind::checker;
    throw std::invalid_argument("unknown dataset kind '" + s + "' (expected " + join_kinds() + ")");
}

void DatasetSpec::validate() const {
    if (classes < 1) throw std::invalid_argument("dataset: need at least one class");
    if (image_size < 2 || channels < 1) throw std::invalid_argument("dataset: image must be at least 2x2x1");
    if (!(noise_std > 0.0)) throw std::invalid_argument("dataset: noise_std must be > 0");
    if (kind == DatasetKind::gaussian_blobs && !(blob_width > 0.0)) {
        throw std::invalid_argument("dataset: blob_width must be > 0");
    }
    if (kind == DatasetKind::bars && (classes + 1) / 2 > image_size) {
        throw std::invalid_argument("dataset: bars supports at most 2 * image_size classes");
    }
    if (kind == DatasetKind::checker && classes > 10) throw std::invalid_argument("dataset: checker supports 10 classes");
}

SyntheticDataset::SyntheticDataset(DatasetSpec spec) : spec_(spec) {
    spec_.validate();
    templates_.reserve(spec_.classes);
    for (int k = 0; k < spec_.classes; ++k) {
        switch (spec_.kind) {
            case DatasetKind::gaussian_blobs: templates_.push_back(blob_template(spec_, k)); break;
            case DatasetKind::bars: templates_.push_back(bars_template(spec_, k)); break;
            case DatasetKind::checker: templates_.push_back(checker_template(spec_, k)); break;
        }
    }
}

Shape SyntheticDataset::image_shape() const {
    return {static_cast<std::size_t>(spec_.channels), static_cast<std::size_t>(spec_.image_size),
            static_cast<std::size_t>(spec_.image_size)};
}

Sample SyntheticDataset::sample(std::uint64_t index) const {
    const int label = static_cast<int>(index % static_cast<std::uint64_t>(spec_.classes));
    Rng rng(mix_seed(spec_.seed, index));
    Array img = randn(image_shape(), rng, spec_.noise_std);
    img += templates_[label];
    return {std::move(img), label};
}

metrics::GaussianStats SyntheticDataset::population_stats() const {
    const auto D = static_cast<Eigen::Index>(shape_numel(image_shape()));
    metrics::GaussianStats g;
    g.mean = Eigen::VectorXd::Zero(D);
    for (const auto& t : templates_) g.mean += as_vector(t);
    g.mean /= static_cast<double>(spec_.classes);
    g.cov = Eigen::MatrixXd::Identity(D, D) * (spec_.noise_std * spec_.noise_std);
    for (const auto& t : templates_) {
        const Eigen::VectorXd c = as_vector(t) - g.mean;
        g.cov.noalias() += c * c.transpose() / static_cast<double>(spec_.classes);
    }
    return g;
}

SyntheticDataset make_synthetic_dataset(const DatasetSpec& spec) { return SyntheticDataset(spec); }

std::string to_string(Stage s) {
    switch (s) {
        case Stage::scratch: return "scratch";
        case Stage::skip_only: return "skip-only";
        case Stage::full: return "full";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "scratch") return Stage::scratch;
    if (s == "skip-only") return Stage::skip_only;
    if (s == "full") return Stage::full;
    throw std::invalid_argument("unknown stage '" + s + "' (expected scratch, skip-only, full)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
    if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) {
        throw std::invalid_argument("train: label_dropout must lie in [0, 1]");
    }
    if (eval_every < 0) throw std::invalid_argument("train: eval_every must be >= 0");
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw std::invalid_argument("train: rms_decay must lie in [0, 1)");
    if (!(rms_eps > 0.0)) throw std::invalid_argument("train: rms_eps must be > 0");
    dataset.validate();
}

std::vector<BatchItem> draw_batch(const TrainConfig& cfg, const SyntheticDataset& data,
                                  const diffusion::NoiseSchedule& sched, int step, int null_label) {
    Rng rng(mix_seed(mix_seed(cfg.seed, kBatchStream), static_cast<std::uint64_t>(static_cast<std::int64_t>(step))));
    std::uniform_int_distribution<int> tdist(1, sched.T);
    std::bernoulli_distribution drop(cfg.label_dropout);
    std::uniform_int_distribution<std::uint64_t> idist(0, std::numeric_limits<std::uint32_t>::max());
    std::vector<BatchItem> out;
    out.reserve(cfg.batch);
    for (int j = 0; j < cfg.batch; ++j) {
        Sample s = data.sample(idist(rng));
        BatchItem item;
        item.x0 = std::move(s.image);
        item.label = drop(rng) ? null_label : s.label;
        item.t = tdist(rng);
        item.noise = randn(data.image_shape(), rng);
        out.push_back(std::move(item));
    }
    return out;
}

TrainingDiverged::TrainingDiverged(int step, double loss)
    : std::runtime_error([&] {
          std::ostringstream os;
          os << "training diverged at step " << step << " (loss " << loss << ")";
          return os.str();
      }()),
      step_(step) {}

TrainResult train(model::SkipDiT& model, const TrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                  const ProgressFn& progress) {
    cfg.validate();
    if (cfg.stage == Stage::skip_only) {
        if (model.config().variant != model::Variant::skip) {
            throw std::invalid_argument("train: stage skip-only requires the skip variant");
        }
        if (model.bypass()) throw std::invalid_argument("train: stage skip-only with the fusion bypass has nothing to fit");
    }
    const SyntheticDataset data(cfg.dataset);
    check_model_data(model, cfg.dataset);
    const std::set<std::string> names = trainable_names(model, cfg.stage);

    ParamSet rms;
    for (const auto& n : names) rms.add(n, Array(model.params().get(n).shape()));

    TrainResult res;
    res.losses.reserve(cfg.steps);
    double decay_pow = 1.0;
    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<BatchItem> batch = draw_batch(cfg, data, sched, step, model.null_label());
        for (const auto& it : batch) {
            ++res.labels_drawn;
            if (it.label == model.null_label()) ++res.null_labels;
        }
        const model::Bindings b = model::Bindings::trainable(model.params(), names);
        const Var loss = batch_loss(model, b, batch, sched);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw TrainingDiverged(step, lv);
        res.losses.push_back(lv);

        const ParamSet grads = gradient(loss, b.trainable_vars());
        decay_pow *= cfg.rms_decay;
        const double correction = 1.0 - decay_pow;
        ParamSet& ps = model.mutable_params();
        for (const auto& n : names) {
            Array& p = ps.get(n);
            Array& v = rms.get(n);
            const Array& g = grads.get(n);
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = cfg.rms_decay * v[i] + (1.0 - cfg.rms_decay) * g[i] * g[i];
                p[i] -= cfg.lr * g[i] / (std::sqrt(v[i] / correction) + cfg.rms_eps);
            }
        }
        if (progress) progress(step + 1, lv);
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) res.checkpoints.push_back({step + 1, ps});
    }
    return res;
}

double evaluate_loss(const model::SkipDiT& model, const TrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                     int batches) {
    cfg.validate();
    if (batches < 1) throw std::invalid_argument("evaluate_loss: need at least one batch");
    const SyntheticDataset data(cfg.dataset);
    check_model_data(model, cfg.dataset);
    std::vector<double> per(batches);
    parallel_for(static_cast<std::size_t>(batches), [&](std::size_t k) {
        const auto batch = draw_batch(cfg, data, sched, -2 - static_cast<int>(k), model.null_label());
        per[k] = batch_loss(model, model.constant_bindings(), batch, sched).value().item();
    });
    return window_mean(per, 0, per.size());
}

std::string to_string(FusionInit f) { return f == FusionInit::random ? "random" : "passthrough-fit"; }

FusionInit fusion_init_from_string(const std::string& s) {
    if (s == "random") return FusionInit::random;
    if (s == "passthrough-fit") return FusionInit::passthrough_fit;
    throw std::invalid_argument("unknown fusion init '" + s + "' (expected random, passthrough-fit)");
}

ContinualConfig default_continual_config(const TrainConfig& base, int total_steps) {
    if (total_steps < 4) throw std::invalid_argument("continual: need at least 4 total steps");
    ContinualConfig c;
    c.stage1 = base;
    c.stage1.stage = Stage::skip_only;
    c.stage1.steps = total_steps / 4;
    c.stage2 = base;
    c.stage2.stage = Stage::full;
    c.stage2.steps = total_steps - c.stage1.steps;
    c.stage2.seed = mix_seed(base.seed, 2);
    c.fusion_seed = mix_seed(base.seed, 1);
    return c;
}

std::uint64_t block_hash(const ParamSet& params) {
    ParamSet shared;
    for (const auto& [name, arr] : params)
        if (!model::is_fusion_param(name)) shared.add(name, arr);
    return params_hash(shared);
}

ContinualResult two_stage_continual(const model::SkipDiT& vanilla, const model::ModelConfig& skip_cfg,
                                    const ContinualConfig& cfg, const diffusion::NoiseSchedule& sched,
                                    const ProgressFn& progress) {
    if (vanilla.config().variant != model::Variant::vanilla) {
        throw std::invalid_argument("continual: source checkpoint must be the vanilla variant");
    }
    if (skip_cfg.variant != model::Variant::skip) throw std::invalid_argument("continual: target must be the skip variant");
    model::ModelConfig as_vanilla = skip_cfg;
    as_vanilla.variant = model::Variant::vanilla;
    if (!(as_vanilla == vanilla.config())) {
        throw std::invalid_argument("continual: vanilla checkpoint is incompatible with the skip config");
    }
    if (cfg.continuity_window < 1 || cfg.stage1.steps < cfg.continuity_window ||
        cfg.stage2.steps < cfg.continuity_window) {
        throw std::invalid_argument("continual: each stage needs at least continuity_window steps");
    }
    cfg.stage1.validate();
    cfg.stage2.validate();

    ContinualResult res{model::skip_from_vanilla(vanilla, cfg.fusion_seed), {}, {}, 0, 0, 0, 0.0, 0.0};
    res.vanilla_block_hash = block_hash(vanilla.params());
    res.pre_stage1_block_hash = block_hash(res.model.params());

    res.model.set_bypass(true);
    const SyntheticDataset data(cfg.stage1.dataset);
    const auto probe = draw_batch(cfg.stage1, data, sched, -3, vanilla.null_label());
    for (std::size_t k = 0; k < probe.size(); ++k) {
        Rng rng(mix_seed(cfg.fusion_seed, kProbeStream + k));
        const Array x = randn(data.image_shape(), rng);
        const Array a = vanilla.predict(x, probe[k].t, probe[k].label);
        const Array b = res.model.predict(x, probe[k].t, probe[k].label);
        for (std::size_t i = 0; i < a.size(); ++i) {
            res.pre_stage_max_diff = std::max(res.pre_stage_max_diff, std::abs(a[i] - b[i]));
        }
    }
    res.model.set_bypass(false);

    if (cfg.init == FusionInit::passthrough_fit) fit_passthrough(res.model, cfg.stage1, sched, data);

    ProgressFn p2;
    if (progress) p2 = [&](int step, double loss) { progress(cfg.stage1.steps + step, loss); };
    res.stage1 = train(res.model, cfg.stage1, sched, progress);
    res.post_stage1_block_hash = block_hash(res.model.params());
    res.stage2 = train(res.model, cfg.stage2, sched, p2);

    const auto w = static_cast<std::size_t>(cfg.continuity_window);
    const double tail = window_mean(res.stage1.losses, res.stage1.losses.size() - w, w);
    const double head = window_mean(res.stage2.losses, 0, w);
    res.continuity_ratio = head / tail;
    return res;
}

Eigen::MatrixXd random_projection(std::size_t input_dim, std::size_t out_dim, std::uint64_t seed) {
    if (out_dim == 0 || out_dim > input_dim) throw std::invalid_argument("random_projection: need 0 < out_dim <= input_dim");
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd g(static_cast<Eigen::Index>(input_dim), static_cast<Eigen::Index>(out_dim));
    for (Eigen::Index j = 0; j < g.cols(); ++j)
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = nd(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
    return q.transpose();
}

double toy_fid_from_samples(const std::vector<Array>& samples, const SyntheticDataset& data, std::size_t proj_dim,
                            std::uint64_t proj_seed) {
    if (samples.size() < 2) throw std::invalid_argument("toy_fid: need at least two samples");
    const std::size_t D = shape_numel(data.image_shape());
    metrics::GaussianStats pop = data.population_stats();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() != D) throw ShapeError("toy_fid: sample size differs from the dataset image");
        rows.row(static_cast<Eigen::Index>(i)) = as_vector(samples[i]).transpose();
    }
    if (proj_dim == 0 || proj_dim == D) return metrics::frechet_gaussian(metrics::fit_gaussian(rows), pop);
    const Eigen::MatrixXd P = random_projection(D, proj_dim, proj_seed);
    pop.mean = P * pop.mean;
    pop.cov = P * pop.cov * P.transpose();
    const Eigen::MatrixXd projected = rows * P.transpose();
    return metrics::frechet_gaussian(metrics::fit_gaussian(projected), pop);
}

std::vector<Array> generate_samples(const model::SkipDiT& model, const FidConfig& cfg,
                                    const diffusion::NoiseSchedule& sched) {
    if (cfg.n_samples < 2) throw std::invalid_argument("toy_fid: need at least two samples");
    std::vector<Array> out(cfg.n_samples);
    const Shape shape = model.config().image_shape();
    parallel_for(out.size(), [&](std::size_t i) {
        Rng rng(mix_seed(mix_seed(cfg.seed, kSampleStream), i));
        const Array x_T = randn(shape, rng);
        diffusion::SamplerConfig sc = cfg.sampler;
        sc.seed = mix_seed(cfg.sampler.seed, i);
        out[i] = diffusion::sample(model, x_T, static_cast<int>(i % model.num_classes()), sc, sched);
    });
    return out;
}

double toy_fid_eval(const model::SkipDiT& model, const SyntheticDataset& data, const FidConfig& cfg,
                    const diffusion::NoiseSchedule& sched) {
    return toy_fid_from_samples(generate_samples(model, cfg, sched), data, cfg.proj_dim, mix_seed(cfg.seed, 0x9f0));
}

ConvergenceCurve convergence_curve(const model::ModelConfig& mcfg, const TrainConfig& tcfg, const FidConfig& fcfg,
                                   const diffusion::NoiseSchedule& sched, std::uint64_t seed) {
    if (tcfg.eval_every < 1) throw std::invalid_argument("convergence: eval_every must be >= 1");
    model::SkipDiT m = model::SkipDiT::create(mcfg, seed);
    TrainConfig tc = tcfg;
    tc.seed = seed;
    tc.stage = Stage::scratch;
    const TrainResult tr = train(m, tc, sched);
    const SyntheticDataset data(tc.dataset);
    ConvergenceCurve c;
    c.losses = tr.losses;
    c.final_params = m.params();
    for (const auto& ck : tr.checkpoints) {
        m.set_params(ck.params);
        c.steps.push_back(ck.step);
        c.fid.push_back(toy_fid_eval(m, data, fcfg, sched));
    }
    return c;
}

std::vector<PairedRun> convergence_compare(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                           const FidConfig& fcfg, const diffusion::NoiseSchedule& sched,
                                           const std::vector<std::uint64_t>& seeds) {
    std::vector<PairedRun> out;
    for (std::uint64_t seed : seeds) {
        PairedRun r;
        r.seed = seed;
        model::ModelConfig vc = mcfg, sc = mcfg;
        vc.variant = model::Variant::vanilla;
        sc.variant = model::Variant::skip;
        r.vanilla = convergence_curve(vc, tcfg, fcfg, sched, seed);
        r.skip = convergence_curve(sc, tcfg, fcfg, sched, seed);
        if (!r.vanilla.fid.empty()) {
            const double target = r.vanilla.fid.back();
            for (std::size_t k = 0; k < r.skip.fid.size(); ++k) {
                if (r.skip.fid[k] <= target) {
                    r.skip_steps_to_target = r.skip.steps[k];
                    r.skip_reached = true;
                    break;
                }
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace skdt::trainer
