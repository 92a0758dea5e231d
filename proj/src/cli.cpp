#include "skdt/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "skdt/cache.hpp"
#include "skdt/io.hpp"
#include "skdt/metrics.hpp"
#include "skdt/parallel.hpp"
#include "skdt/stability.hpp"
#include "skdt/trainer.hpp"

#ifndef SKDT_VERSION
#define SKDT_VERSION "unknown"
#endif

namespace skdt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

struct Context {
    std::string sub;
    std::string config_path;
    fs::path config_dir = ".";
    fs::path out_dir;
    std::uint64_t seed = 0;
    bool quiet = false;
    json cfg = json::object();
    json effective = json::object();
    std::vector<std::string> outputs;
    model::EvalCounter counter;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    std::string out_file(const std::string& name) {
        outputs.push_back(name);
        const fs::path p = out_dir / name;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p.string();
    }

    std::string resolve(const std::string& path) const {
        fs::path p = path;
        return p.is_relative() ? (config_dir / p).string() : p.string();
    }

    void note(const std::string& msg) const {
        if (!quiet) *err << msg << '\n';
    }

    void add(const model::EvalCounter& c) {
        counter.blocks += c.blocks;
        counter.fusions += c.fusions;
        counter.forwards += c.forwards;
    }
};

void write_json(Context& ctx, const std::string& name, const json& j) {
    std::ofstream os = io::open_output(ctx.out_file(name));
    os << std::setprecision(17) << j.dump(2) << '\n';
}

// ---- config sections ------------------------------------------------------

diffusion::NoiseSchedule read_schedule(Context& ctx) {
    const json j = section(ctx.cfg, "schedule");
    check_keys(j, {"T", "beta_start", "beta_end"}, "schedule");
    const int T = j.value("T", 1000);
    const double b0 = j.value("beta_start", 1e-4), b1 = j.value("beta_end", 2e-2);
    ctx.effective["schedule"] = {{"T", T}, {"beta_start", b0}, {"beta_end", b1}};
    return diffusion::make_schedule(T, b0, b1);
}

diffusion::SamplerConfig read_sampler(Context& ctx) {
    const json j = section(ctx.cfg, "sampler");
    check_keys(j, {"kind", "steps", "cfg_scale", "seed"}, "sampler");
    diffusion::SamplerConfig s;
    const std::string kind = j.value("kind", std::string("ddim"));
    if (kind == "ddim") {
        s.kind = diffusion::SamplerKind::ddim;
    } else if (kind == "ddpm") {
        s.kind = diffusion::SamplerKind::ddpm;
    } else {
        throw ConfigError("sampler: unknown kind '" + kind + "' (expected ddim, ddpm)");
    }
    s.steps = j.value("steps", 50);
    s.cfg_scale = j.value("cfg_scale", 1.0);
    s.seed = j.value("seed", ctx.seed);
    ctx.effective["sampler"] = {{"kind", kind}, {"steps", s.steps}, {"cfg_scale", s.cfg_scale}, {"seed", s.seed}};
    return s;
}

model::ModelConfig parse_model_config(const json& j) {
    check_keys(j,
               {"image_size", "channels", "patch", "hidden", "depth", "heads", "num_classes", "mlp_ratio", "freq_dim",
                "variant", "fusion_norm_affine", "init_std"},
               "model");
    json core = j;
    core.erase("init_std");
    model::ModelConfig mc = model::config_from_json(core.dump());
    mc.validate();
    return mc;
}

model::SkipDiT read_model(Context& ctx) {
    if (ctx.cfg.contains("checkpoint")) {
        if (ctx.cfg.contains("model")) throw ConfigError("give either 'model' or 'checkpoint', not both");
        const std::string path = ctx.cfg.at("checkpoint").get<std::string>();
        ctx.effective["checkpoint"] = path;
        return model::load_checkpoint(ctx.resolve(path));
    }
    const json j = section(ctx.cfg, "model");
    const model::ModelConfig mc = parse_model_config(j);
    const double init_std = j.value("init_std", 0.0);
    model::SkipDiT m = model::SkipDiT::create(mc, ctx.seed);
    if (init_std > 0.0) model::randomize_zero_init(m, mix_seed(ctx.seed, 1), init_std);
    json eff = json::parse(model::config_to_json(mc, false));
    eff.erase("bypass");
    eff["init_std"] = init_std;
    ctx.effective["model"] = eff;
    return m;
}

trainer::DatasetSpec read_dataset(Context& ctx, const model::ModelConfig& mc) {
    const json j = section(ctx.cfg, "dataset");
    check_keys(j, {"kind", "classes", "image_size", "channels", "noise_std", "blob_width", "blob_radius", "seed"},
               "dataset");
    trainer::DatasetSpec d;
    d.kind = trainer::dataset_kind_from_string(j.value("kind", trainer::to_string(d.kind)));
    d.classes = j.value("classes", mc.num_classes);
    d.image_size = j.value("image_size", mc.image_size);
    d.channels = j.value("channels", mc.channels);
    d.noise_std = j.value("noise_std", d.noise_std);
    d.blob_width = j.value("blob_width", d.blob_width);
    d.blob_radius = j.value("blob_radius", d.blob_radius);
    d.seed = j.value("seed", ctx.seed);
    d.validate();
    ctx.effective["dataset"] = {{"kind", trainer::to_string(d.kind)},
                                {"classes", d.classes},
                                {"image_size", d.image_size},
                                {"channels", d.channels},
                                {"noise_std", d.noise_std},
                                {"blob_width", d.blob_width},
                                {"blob_radius", d.blob_radius},
                                {"seed", d.seed}};
    return d;
}

trainer::TrainConfig read_train(Context& ctx, const trainer::DatasetSpec& data) {
    const json j = section(ctx.cfg, "train");
    check_keys(j, {"steps", "batch", "lr", "label_dropout", "stage", "eval_every", "rms_decay", "rms_eps"}, "train");
    trainer::TrainConfig t;
    t.steps = j.value("steps", t.steps);
    t.batch = j.value("batch", t.batch);
    t.lr = j.value("lr", t.lr);
    t.label_dropout = j.value("label_dropout", t.label_dropout);
    t.stage = trainer::stage_from_string(j.value("stage", trainer::to_string(t.stage)));
    t.eval_every = j.value("eval_every", t.eval_every);
    t.rms_decay = j.value("rms_decay", t.rms_decay);
    t.rms_eps = j.value("rms_eps", t.rms_eps);
    t.seed = ctx.seed;
    t.dataset = data;
    t.validate();
    ctx.effective["train"] = {{"steps", t.steps},
                              {"batch", t.batch},
                              {"lr", t.lr},
                              {"label_dropout", t.label_dropout},
                              {"stage", trainer::to_string(t.stage)},
                              {"eval_every", t.eval_every},
                              {"rms_decay", t.rms_decay},
                              {"rms_eps", t.rms_eps}};
    return t;
}

json threshold_json(double th) { return std::isinf(th) ? json("inf") : json(th); }

cache::CachePlan read_plan(Context& ctx, const diffusion::NoiseSchedule& sched, int depth) {
    const json j = section(ctx.cfg, "plan");
    check_keys(j, {"interval", "t_hi", "t_lo", "level", "threshold", "phase", "error_record"}, "plan");
    cache::CachePlan p = cache::default_plan(sched, j.value("interval", 2));
    p.t_hi = j.value("t_hi", p.t_hi);
    p.t_lo = j.value("t_lo", p.t_lo);
    p.level = j.value("level", p.level);
    json eff_record;
    if (j.contains("error_record")) {
        const json& r = j.at("error_record");
        if (r.is_string()) {
            std::ifstream in(ctx.resolve(r.get<std::string>()));
            if (!in) throw ConfigError("plan: cannot open error record '" + r.get<std::string>() + "'");
            p.error_record = cache::read_error_record_csv(in);
        } else {
            p.error_record = r.get<std::vector<double>>();
        }
        eff_record = r;
    }
    if (j.contains("phase")) {
        for (int t : j.at("phase").get<std::vector<int>>()) p.phase.insert(t);
    }
    if (j.contains("threshold")) {
        const json& th = j.at("threshold");
        if (th.is_string()) {
            const std::string s = th.get<std::string>();
            if (s == "default") {
                p.threshold = cache::default_threshold(p);
            } else if (s != "inf") {
                throw ConfigError("plan: threshold must be a number, \"inf\" or \"default\"");
            }
        } else {
            p.threshold = th.get<double>();
        }
    }
    p.validate(sched.T, depth);
    json eff = {{"interval", p.interval},
                {"t_hi", p.t_hi},
                {"t_lo", p.t_lo},
                {"level", p.level},
                {"threshold", threshold_json(p.threshold)},
                {"phase", std::vector<int>(p.phase.begin(), p.phase.end())}};
    if (!eff_record.is_null()) eff["error_record"] = eff_record;
    ctx.effective["plan"] = eff;
    return p;
}

/// x_T drawn per index from the run seed; labels cycle through the classes.
std::vector<cache::CalibrationSample> draw_inputs(Context& ctx, const model::SkipDiT& m, const char* key, int fallback,
                                                  std::uint64_t stream) {
    const int n = ctx.cfg.value(key, fallback);
    if (n < 1) throw ConfigError(std::string(key) + " must be >= 1");
    ctx.effective[key] = n;
    std::vector<cache::CalibrationSample> out;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(mix_seed(ctx.seed, stream), static_cast<std::uint64_t>(i)));
        out.push_back({randn(m.config().image_shape(), rng), i % m.num_classes()});
    }
    return out;
}

std::vector<cache::CalibrationSample> calibration_inputs(Context& ctx, const model::SkipDiT& m) {
    return draw_inputs(ctx, m, "calibration_samples", 8, 0xca1);
}

double metric_peak(const Array& a, const Array& b) {
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        lo = std::min({lo, a[i], b[i]});
        hi = std::max({hi, a[i], b[i]});
    }
    return std::max(hi - lo, 1e-12);
}

diffusion::SamplerConfig per_sample(const diffusion::SamplerConfig& s, std::size_t i) {
    diffusion::SamplerConfig c = s;
    c.seed = mix_seed(s.seed, i);
    return c;
}

json counter_json(const model::EvalCounter& c) {
    return {{"blocks", c.blocks}, {"fusions", c.fusions}, {"forwards", c.forwards}};
}

// ---- subcommands ----------------------------------------------------------

void run_train(Context& ctx) {
    const json j = section(ctx.cfg, "model");
    if (j.contains("init_std")) throw ConfigError("train: init_std applies to untrained models only");
    const model::ModelConfig mc = parse_model_config(j);
    json eff = json::parse(model::config_to_json(mc, false));
    eff.erase("bypass");
    ctx.effective["model"] = eff;
    const auto sched = read_schedule(ctx);
    const trainer::TrainConfig tc = read_train(ctx, read_dataset(ctx, mc));
    model::SkipDiT m = model::SkipDiT::create(mc, ctx.seed);
    const int every = std::max(1, tc.steps / 20);
    const trainer::TrainResult r = trainer::train(m, tc, sched, [&](int step, double loss) {
        if (step % every == 0) ctx.note("step " + std::to_string(step) + " loss " + std::to_string(loss));
    });
    {
        std::ofstream os = io::open_output(ctx.out_file("losses.csv"));
        io::write_loss_csv(os, r.losses);
    }
    for (const auto& ck : r.checkpoints) {
        model::SkipDiT snap(mc, ck.params);
        const std::string name = "checkpoint_" + std::to_string(ck.step) + ".skdt";
        model::save_checkpoint(snap, ctx.out_file(name));
        ctx.outputs.push_back(name + ".json");
    }
    model::save_checkpoint(m, ctx.out_file("model.skdt"));
    ctx.outputs.push_back("model.skdt.json");
    write_json(ctx, "train.json",
               {{"final_loss", r.losses.empty() ? 0.0 : r.losses.back()},
                {"null_label_fraction",
                 r.labels_drawn ? static_cast<double>(r.null_labels) / static_cast<double>(r.labels_drawn) : 0.0},
                {"checkpoints", r.checkpoints.size()}});
}

void run_continual(Context& ctx) {
    if (!ctx.cfg.contains("vanilla_checkpoint")) throw ConfigError("continual: 'vanilla_checkpoint' is required");
    const std::string vpath = ctx.cfg.at("vanilla_checkpoint").get<std::string>();
    ctx.effective["vanilla_checkpoint"] = vpath;
    const model::SkipDiT vanilla = model::load_checkpoint(ctx.resolve(vpath));
    model::ModelConfig skip_cfg = vanilla.config();
    skip_cfg.variant = model::Variant::skip;
    const auto sched = read_schedule(ctx);
    const trainer::TrainConfig base = read_train(ctx, read_dataset(ctx, vanilla.config()));
    const int total = ctx.cfg.value("total_steps", base.steps);
    trainer::ContinualConfig cc = trainer::default_continual_config(base, total);
    cc.init = trainer::fusion_init_from_string(ctx.cfg.value("fusion_init", std::string("random")));
    cc.continuity_window = ctx.cfg.value("continuity_window", cc.continuity_window);
    ctx.effective["total_steps"] = total;
    ctx.effective["fusion_init"] = trainer::to_string(cc.init);
    ctx.effective["continuity_window"] = cc.continuity_window;
    const trainer::ContinualResult r = trainer::two_stage_continual(vanilla, skip_cfg, cc, sched);
    {
        std::ofstream os = io::open_output(ctx.out_file("stage1_losses.csv"));
        io::write_loss_csv(os, r.stage1.losses);
    }
    {
        std::ofstream os = io::open_output(ctx.out_file("stage2_losses.csv"));
        io::write_loss_csv(os, r.stage2.losses);
    }
    model::save_checkpoint(r.model, ctx.out_file("model.skdt"));
    ctx.outputs.push_back("model.skdt.json");
    write_json(ctx, "continual.json",
               {{"stage1_steps", cc.stage1.steps},
                {"stage2_steps", cc.stage2.steps},
                {"pre_stage_max_diff", r.pre_stage_max_diff},
                {"vanilla_block_hash", r.vanilla_block_hash},
                {"pre_stage1_block_hash", r.pre_stage1_block_hash},
                {"post_stage1_block_hash", r.post_stage1_block_hash},
                {"blocks_unchanged_in_stage1", r.post_stage1_block_hash == r.vanilla_block_hash},
                {"continuity_ratio", r.continuity_ratio}});
}

void run_sample(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    std::vector<int> labels;
    if (ctx.cfg.contains("labels")) {
        labels = ctx.cfg.at("labels").get<std::vector<int>>();
    } else {
        for (int k = 0; k < m.num_classes(); ++k) labels.push_back(k);
    }
    if (labels.empty()) throw ConfigError("sample: labels must not be empty");
    const int cols = ctx.cfg.value("cols", std::min<int>(8, static_cast<int>(labels.size())));
    ctx.effective["labels"] = labels;
    ctx.effective["cols"] = cols;
    std::vector<Array> images(labels.size());
    std::vector<model::EvalCounter> counters(labels.size());
    parallel_for(labels.size(), [&](std::size_t i) {
        Rng rng(mix_seed(mix_seed(ctx.seed, 0x5a), i));
        const Array x_T = randn(m.config().image_shape(), rng);
        images[i] = cache::uncached_sample(m, x_T, labels[i], per_sample(sc, i), sched, &counters[i]);
    });
    for (const auto& c : counters) ctx.add(c);
    io::save_ppm_grid(ctx.out_file("samples.ppm"), images, cols);
}

struct PairScore {
    double cosine;
    double psnr;
    double ssim;
};

PairScore score_pair(const Array& ref, const Array& got) {
    const double peak = metric_peak(ref, got);
    return {metrics::cosine_similarity(ref, got), metrics::psnr(ref, got, peak),
            metrics::ssim(ref, got, metrics::SsimConfig::for_range(peak))};
}

json finite_or_string(double v) { return std::isfinite(v) ? json(v) : json(v > 0 ? "inf" : "-inf"); }

void run_cache_run(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const cache::CachePlan plan = read_plan(ctx, sched, m.config().depth);
    const auto inputs = draw_inputs(ctx, m, "samples", 4, 0xc4);
    const std::size_t n = inputs.size();
    std::vector<Array> ref(n), got(n);
    std::vector<model::EvalCounter> ref_c(n);
    std::vector<cache::CacheRunReport> reports(n);
    parallel_for(n, [&](std::size_t i) {
        ref[i] = cache::uncached_sample(m, inputs[i].x_T, inputs[i].label, per_sample(sc, i), sched, &ref_c[i]);
        got[i] = cache::cached_sample(m, inputs[i].x_T, inputs[i].label, plan, per_sample(sc, i), sched, &reports[i]);
    });
    json per = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const PairScore s = score_pair(ref[i], got[i]);
        ctx.add(reports[i].counter);
        per.push_back({{"label", inputs[i].label},
                       {"identical", ref[i] == got[i]},
                       {"cosine", s.cosine},
                       {"psnr", finite_or_string(s.psnr)},
                       {"ssim", s.ssim},
                       {"blocks", reports[i].counter.blocks},
                       {"uncached_blocks", ref_c[i].blocks}});
    }
    const auto ts = diffusion::sampler_timesteps(sc, sched);
    const cache::BlockEvalCount cnt = cache::count_block_evals(plan, ts, m.config().depth);
    {
        std::ofstream os = io::open_output(ctx.out_file("decisions.csv"));
        os << "t,kind,error\n" << std::setprecision(17);
        for (const auto& d : reports.front().decisions) os << d.t << ',' << cache::to_string(d.kind) << ',' << d.error << '\n';
    }
    write_json(ctx, "cache_run.json",
               {{"samples", per},
                {"analytic_block_evals_per_branch", cnt.block_evals},
                {"analytic_speedup", cnt.speedup},
                {"full_steps", cnt.full_steps},
                {"cached_steps", cnt.cached_steps}});
}

void run_cache_bench(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const cache::CachePlan base = read_plan(ctx, sched, m.config().depth);
    const std::vector<int> intervals = ctx.cfg.value("intervals", std::vector<int>{2, 3, 4});
    ctx.effective["intervals"] = intervals;
    const auto inputs = draw_inputs(ctx, m, "samples", 8, 0xbe);
    const std::size_t n = inputs.size();
    const auto ts = diffusion::sampler_timesteps(sc, sched);
    const int depth = m.config().depth;

    std::vector<Array> ref(n);
    parallel_for(n, [&](std::size_t i) {
        ref[i] = cache::uncached_sample(m, inputs[i].x_T, inputs[i].label, per_sample(sc, i), sched);
    });
    std::ofstream csv = io::open_output(ctx.out_file("bench.csv"));
    csv << "interval,speedup,baseline_evals,baseline_speedup,psnr_skip,psnr_static,ssim_skip,ssim_static\n"
        << std::setprecision(17);
    json rows = json::array();
    for (int N : intervals) {
        cache::CachePlan plan = base;
        plan.interval = N;
        plan.validate(sched.T, depth);
        const cache::BlockEvalCount cnt = cache::count_block_evals(plan, ts, depth);
        const int steps = static_cast<int>(ts.size());
        const int evals = cache::baseline_evals_for_budget(steps, depth, cnt.block_evals);
        const std::vector<bool> refresh = cache::even_refresh_steps(steps, evals);
        const double b_speed = static_cast<double>(steps) / static_cast<double>(evals);
        std::vector<PairScore> sk(n), st(n);
        std::vector<model::EvalCounter> ck(n), cs(n);
        parallel_for(n, [&](std::size_t i) {
            cache::CacheRunReport rep;
            const Array a = cache::cached_sample(m, inputs[i].x_T, inputs[i].label, plan, per_sample(sc, i), sched, &rep);
            ck[i] = rep.counter;
            const Array b = cache::static_schedule_baseline(m, inputs[i].x_T, inputs[i].label, refresh,
                                                            per_sample(sc, i), sched, &cs[i]);
            sk[i] = score_pair(ref[i], a);
            st[i] = score_pair(ref[i], b);
        });
        double ps = 0, pb = 0, ss = 0, sb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            ctx.add(ck[i]);
            ctx.add(cs[i]);
            ps += sk[i].psnr / n;
            pb += st[i].psnr / n;
            ss += sk[i].ssim / n;
            sb += st[i].ssim / n;
        }
        csv << N << ',' << cnt.speedup << ',' << evals << ',' << b_speed << ',' << ps << ',' << pb << ',' << ss << ','
            << sb << '\n';
        rows.push_back({{"interval", N},
                        {"speedup", cnt.speedup},
                        {"baseline_evals", evals},
                        {"baseline_speedup", b_speed},
                        {"psnr_skip", finite_or_string(ps)},
                        {"psnr_static", finite_or_string(pb)},
                        {"ssim_skip", ss},
                        {"ssim_static", sb}});
    }
    write_json(ctx, "bench.json", {{"rows", rows}});
}

void run_calibrate(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    cache::CachePlan plan = read_plan(ctx, sched, m.config().depth);
    const auto inputs = calibration_inputs(ctx, m);
    plan.error_record = cache::calibrate_error_record(m, inputs, sc, sched, plan.level);
    plan.threshold = cache::default_threshold(plan);
    {
        std::ofstream os = io::open_output(ctx.out_file("error_record.csv"));
        cache::write_error_record_csv(os, plan.error_record);
    }
    std::ofstream os = io::open_output(ctx.out_file("plan.json"));
    os << cache::plan_to_json(plan, "error_record.csv") << '\n';
}

void run_phase(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const double q = ctx.cfg.value("fraction", 0.1);
    const int level = ctx.cfg.value("level", 1);
    ctx.effective["fraction"] = q;
    ctx.effective["level"] = level;
    const auto inputs = calibration_inputs(ctx, m);
    const std::set<int> phase = cache::detect_dynamic_phase(m, inputs, q, sc, sched, level);
    const auto change = cache::step_feature_change(m, inputs, level, sc, sched);
    write_json(ctx, "phase.json",
               {{"timesteps", diffusion::sampler_timesteps(sc, sched)},
                {"step_change", change},
                {"phase", std::vector<int>(phase.begin(), phase.end())}});
}

void run_heatmap(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const auto inputs = draw_inputs(ctx, m, "samples", 1, 0x4e);
    const cache::FeatureHeatmap h = cache::feature_heatmap(m, inputs.front(), sc, sched);
    std::ofstream os = io::open_output(ctx.out_file("heatmap.csv"));
    cache::write_heatmap_csv(os, h);
}

void run_landscape(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const int t = ctx.cfg.value("t", sched.T / 2);
    const int label = ctx.cfg.value("label", 0);
    const double eps_norm = ctx.cfg.value("eps_norm", 0.05);
    const double radius = ctx.cfg.value("radius", 1.0);
    const int points = ctx.cfg.value("points", 11);
    ctx.effective["t"] = t;
    ctx.effective["label"] = label;
    ctx.effective["eps_norm"] = eps_norm;
    ctx.effective["radius"] = radius;
    ctx.effective["points"] = points;
    Rng rng(mix_seed(ctx.seed, 0x1a));
    const Array x = diffusion::q_sample(randn(m.config().image_shape(), rng), t,
                                        randn(m.config().image_shape(), rng), sched);
    const auto spec = stability::make_perturbation(m.params(), eps_norm, mix_seed(ctx.seed, 0x1b));
    const auto grid = stability::symmetric_grid(radius, points);
    const stability::Landscape l = stability::landscape(m, x, t, label, spec, grid, grid);
    {
        std::ofstream os = io::open_output(ctx.out_file("landscape.csv"));
        stability::write_landscape_csv(os, l);
    }
    write_json(ctx, "landscape.json", {{"mean", l.mean()}, {"variant", model::to_string(m.config().variant)}});
}

void run_curves(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const cache::CachePlan plan = read_plan(ctx, sched, m.config().depth);
    const auto inputs = draw_inputs(ctx, m, "samples", 4, 0xc0);
    const auto ts = diffusion::sampler_timesteps(sc, sched);
    const auto cnt = cache::count_block_evals(plan, ts, m.config().depth);
    const int matched = cache::baseline_evals_for_budget(static_cast<int>(ts.size()), m.config().depth, cnt.block_evals);
    const int evals = ctx.cfg.value("static_evals", matched);
    ctx.effective["static_evals"] = evals;
    stability::ReusePolicy skip{stability::ReusePolicy::Kind::skip_cache, plan, 1, 1};
    stability::ReusePolicy stat{stability::ReusePolicy::Kind::static_even, plan, 1, evals};
    const auto a = stability::caching_similarity_curve(m, inputs, skip, sc, sched);
    const auto b = stability::caching_similarity_curve(m, inputs, stat, sc, sched);
    {
        std::ofstream os = io::open_output(ctx.out_file("curve_skip.csv"));
        stability::write_curve_csv(os, a);
    }
    {
        std::ofstream os = io::open_output(ctx.out_file("curve_static.csv"));
        stability::write_curve_csv(os, b);
    }
    auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    write_json(ctx, "curves.json", {{"mean_similarity_skip", avg(a.mean)}, {"mean_similarity_static", avg(b.mean)}});
}

void run_spectral(Context& ctx) {
    const std::vector<int> depths = ctx.cfg.value("depths", std::vector<int>{4, 6, 8});
    const std::vector<double> gammas = ctx.cfg.value("gammas", std::vector<double>{0.7, 0.9});
    const int seeds = ctx.cfg.value("seeds", 20);
    stability::ChainSpec base;
    base.mix = ctx.cfg.value("mix", base.mix);
    base.width = ctx.cfg.value("width", base.width);
    base.nonlinearity = ctx.cfg.value("nonlinearity", base.nonlinearity);
    ctx.effective["depths"] = depths;
    ctx.effective["gammas"] = gammas;
    ctx.effective["seeds"] = seeds;
    ctx.effective["mix"] = base.mix;
    ctx.effective["width"] = base.width;
    ctx.effective["nonlinearity"] = base.nonlinearity;
    std::ofstream csv = io::open_output(ctx.out_file("chains.csv"));
    csv << "depth,gamma,seed,sigma_vanilla,sigma_skip,gamma_pow_depth,skip_below_vanilla\n" << std::setprecision(17);
    json summary = json::array();
    for (int L : depths) {
        for (double g : gammas) {
            stability::ChainSpec spec = base;
            spec.depth = L;
            spec.gamma = g;
            int below = 0;
            for (int s = 0; s < seeds; ++s) {
                const auto seed = mix_seed(ctx.seed, static_cast<std::uint64_t>(s));
                const stability::ChainReport r = stability::empirical_theorem1_check(seed, spec);
                below += r.skip_below_vanilla ? 1 : 0;
                csv << L << ',' << g << ',' << seed << ',' << r.sigma_vanilla << ',' << r.sigma_skip << ','
                    << r.gamma_pow_depth << ',' << (r.skip_below_vanilla ? 1 : 0) << '\n';
            }
            summary.push_back({{"depth", L}, {"gamma", g}, {"skip_below_vanilla", below}, {"seeds", seeds}});
        }
    }
    write_json(ctx, "spectral.json", {{"configs", summary}});
}

json reuse_json(long long tau) { return tau == stability::kUnboundedReuse ? json("unbounded") : json(tau); }

void run_theorems(Context& ctx) {
    check_keys(ctx.cfg, {"seed", "gamma", "mix", "depth", "reuse"}, "theorems");
    stability::IdealModelSpec spec;
    spec.gamma = ctx.cfg.value("gamma", spec.gamma);
    spec.mix = ctx.cfg.value("mix", spec.mix);
    spec.depth = ctx.cfg.value("depth", spec.depth);
    spec.validate();
    const stability::IdealBounds b = stability::ideal_model_bounds(spec);
    std::vector<double> layers;
    for (int l = spec.depth / 2 + 1; l <= spec.depth; ++l) {
        layers.push_back(stability::ideal_layer_bound(spec.gamma, spec.mix, l, spec.depth));
    }
    const json r = section(ctx.cfg, "reuse");
    check_keys(r, {"lip_skip", "delta_skip", "lip_vanilla", "delta_vanilla", "eps_max", "steps"}, "reuse");
    const double lip_s = r.value("lip_skip", 0.5), del_s = r.value("delta_skip", 0.1);
    const double lip_v = r.value("lip_vanilla", 0.9), del_v = r.value("delta_vanilla", 0.1);
    const double eps_max = r.value("eps_max", 0.175);
    const long long steps = r.value("steps", 3LL);
    ctx.effective["gamma"] = spec.gamma;
    ctx.effective["mix"] = spec.mix;
    ctx.effective["depth"] = spec.depth;
    ctx.effective["reuse"] = {{"lip_skip", lip_s},       {"delta_skip", del_s}, {"lip_vanilla", lip_v},
                              {"delta_vanilla", del_v}, {"eps_max", eps_max}, {"steps", steps}};
    write_json(ctx, "theorems.json",
               {{"sigma_vanilla", b.vanilla},
                {"skip_bound", b.skip},
                {"skip_below_vanilla", b.skip < b.vanilla},
                {"upper_layer_bounds", layers},
                {"cumulative_error_skip", stability::cumulative_error(lip_s, del_s, steps)},
                {"cumulative_error_vanilla", stability::cumulative_error(lip_v, del_v, steps)},
                {"tau_skip", reuse_json(stability::max_reuse_interval(lip_s, del_s, eps_max))},
                {"tau_vanilla", reuse_json(stability::max_reuse_interval(lip_v, del_v, eps_max))}});
}

void run_metrics(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const trainer::SyntheticDataset data(read_dataset(ctx, m.config()));
    trainer::FidConfig fc;
    fc.sampler = sc;
    fc.seed = ctx.seed;
    fc.n_samples = ctx.cfg.value("n_samples", 256);
    fc.proj_dim = ctx.cfg.value("proj_dim", static_cast<std::size_t>(16));
    ctx.effective["n_samples"] = fc.n_samples;
    ctx.effective["proj_dim"] = fc.proj_dim;
    const auto samples = trainer::generate_samples(m, fc, sched);
    const double fid = trainer::toy_fid_from_samples(samples, data, fc.proj_dim, mix_seed(fc.seed, 0x9f0));
    std::vector<Array> replay;
    for (int i = 0; i < fc.n_samples; ++i) replay.push_back(data.sample(static_cast<std::uint64_t>(i)).image);
    const double floor = trainer::toy_fid_from_samples(replay, data, fc.proj_dim, mix_seed(fc.seed, 0x9f0));
    write_json(ctx, "metrics.json", {{"toy_fid", fid}, {"replay_toy_fid", floor}, {"n_samples", fc.n_samples}});
}

void run_select_level(Context& ctx) {
    const model::SkipDiT m = read_model(ctx);
    const auto sched = read_schedule(ctx);
    const auto sc = read_sampler(ctx);
    const auto inputs = calibration_inputs(ctx, m);
    const cache::LevelSelection sel = cache::select_skip_level(m, inputs, sc, sched);
    json table = json::array();
    for (const auto& row : sel.table) table.push_back({{"level", row.level}, {"similarity", row.similarity}});
    write_json(ctx, "level.json", {{"level", sel.level}, {"table", table}});
}

const std::map<std::string, std::function<void(Context&)>>& handlers() {
    static const std::map<std::string, std::function<void(Context&)>> h = {
        {"train", run_train},         {"continual", run_continual}, {"sample", run_sample},
        {"cache-run", run_cache_run}, {"cache-bench", run_cache_bench}, {"calibrate", run_calibrate},
        {"phase", run_phase},         {"heatmap", run_heatmap},     {"landscape", run_landscape},
        {"curves", run_curves},       {"spectral", run_spectral},   {"theorems", run_theorems},
        {"metrics", run_metrics},     {"select-level", run_select_level}};
    return h;
}

std::string describe(const std::string& name) {
    static const std::map<std::string, std::string> d = {
        {"train", "train a model on a synthetic dataset"},
        {"continual", "fusion-only stage then full fine-tuning from a vanilla checkpoint"},
        {"sample", "uncached sampling to a PPM grid"},
        {"cache-run", "cached sampling compared with uncached outputs"},
        {"cache-bench", "cached sampling versus a static-interval baseline at matched cost"},
        {"calibrate", "per-timestep error record and a plan using it"},
        {"phase", "timesteps with the largest deep-feature change"},
        {"heatmap", "per-layer feature change across sampler steps"},
        {"landscape", "prediction similarity under a 2-D parameter perturbation"},
        {"curves", "per-step similarity of reused predictions"},
        {"spectral", "Jacobian norms of plain and skip-connected contraction chains"},
        {"theorems", "closed-form stability bounds and reuse intervals"},
        {"metrics", "toy-FID of generated samples"},
        {"select-level", "most stable skip level for caching"}};
    return d.at(name);
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

json RunManifest::to_json() const {
    return {{"subcommand", subcommand},
            {"config_path", config_path},
            {"seed", seed},
            {"out_dir", out_dir},
            {"version", version},
            {"wall_clock_s", wall_clock_s},
            {"counters", counter_json(counter)},
            {"outputs", outputs},
            {"effective_config", effective_config}};
}

std::string version_string() { return SKDT_VERSION; }

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [k, _] : handlers()) v.push_back(k);
        return v;
    }();
    return names;
}

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"skip-connected diffusion transformer toolkit", "skdt_cli"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1, 1);
    std::string config_path, out_dir = ".";
    std::uint64_t seed_override = 0;
    bool quiet = false;
    for (const auto& name : subcommands()) {
        CLI::App* sub = app.add_subcommand(name, describe(name));
        sub->add_option("--config", config_path, "JSON config; defaults apply to missing keys");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_override, "overrides the config seed");
        sub->add_flag("--quiet", quiet, "suppress progress output");
    }
    if (argc > 1 && argv[1][0] != '-' && !handlers().count(argv[1])) {
        err << "error: unknown subcommand '" << one_line(argv[1]) << "'\n" << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << version_string() << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << one_line(e.what()) << '\n' << app.help();
        return 2;
    }

    Context ctx;
    ctx.sub = app.get_subcommands().front()->get_name();
    ctx.out = &out;
    ctx.err = &err;
    ctx.quiet = quiet;
    ctx.config_path = config_path;
    try {
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ConfigError("cannot open config '" + config_path + "'");
            try {
                ctx.cfg = json::parse(in);
            } catch (const json::parse_error& e) {
                throw ConfigError("malformed config: " + std::string(e.what()));
            }
            if (!ctx.cfg.is_object()) throw ConfigError("malformed config: top level must be an object");
            ctx.config_dir = fs::path(config_path).parent_path();
            if (ctx.config_dir.empty()) ctx.config_dir = ".";
        }
        ctx.seed = ctx.cfg.value("seed", std::uint64_t{0});
        if (app.get_subcommands().front()->get_option("--seed")->count() > 0) ctx.seed = seed_override;
        ctx.effective["seed"] = ctx.seed;
    } catch (const std::exception& e) {
        err << "error: " << one_line(e.what()) << '\n' << app.get_subcommands().front()->help();
        return 2;
    }

    try {
        ctx.out_dir = out_dir;
        fs::create_directories(ctx.out_dir);
        const auto t0 = std::chrono::steady_clock::now();
        handlers().at(ctx.sub)(ctx);
        RunManifest m;
        m.subcommand = ctx.sub;
        m.config_path = config_path;
        m.seed = ctx.seed;
        m.out_dir = out_dir;
        m.version = version_string();
        m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        m.counter = ctx.counter;
        m.outputs = ctx.outputs;
        m.effective_config = ctx.effective;
        std::ofstream os = io::open_output((ctx.out_dir / "manifest.json").string());
        os << std::setprecision(17) << m.to_json().dump(2) << '\n';
        if (!quiet) out << (ctx.out_dir / "manifest.json").string() << '\n';
        return 0;
    } catch (const ConfigError& e) {
        err << "error: " << one_line(e.what()) << '\n' << app.get_subcommands().front()->help();
        return 2;
    } catch (const nlohmann::json::exception& e) {
        err << "error: config: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
}

}  // namespace skdt::cli
