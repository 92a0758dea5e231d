#include <cmath>
#include <sstream>

#include "doctest.h"
#include "skdt/cache.hpp"
#include "skdt/random.hpp"

using namespace skdt;
using namespace skdt::cache;
using diffusion::SamplerConfig;
using diffusion::SamplerKind;
using model::ModelConfig;
using model::SkipDiT;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 8;
    c.patch = 4;
    c.hidden = 16;
    c.depth = 6;
    c.heads = 2;
    c.num_classes = 3;
    c.mlp_ratio = 2;
    c.freq_dim = 8;
    return c;
}

SkipDiT live(std::uint64_t seed) {
    SkipDiT m = SkipDiT::create(tiny(), seed);
    model::randomize_zero_init(m, seed + 7, 0.2);
    return m;
}

Array noise(std::uint64_t seed) {
    Rng rng(seed);
    return randn({1, 8, 8}, rng);
}

// Features scale with x only: zero-gated blocks, no positional term, zero head.
SkipDiT constant_feature_model() {
    SkipDiT m = SkipDiT::create(tiny(), 3);
    m.mutable_params().set("pos_embed", Array(m.params().get("pos_embed").shape()));
    model::init_passthrough_fusion(m);
    return m;
}

double cos_oracle(const Array& a, const Array& b) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<long double>(a[i]) * b[i];
        aa += static_cast<long double>(a[i]) * a[i];
        bb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(ab / std::sqrt(aa * bb));
}

}  // namespace

TEST_CASE("interval one is bit-identical to uncached sampling") {
    const SkipDiT m = live(1);
    const auto sched = diffusion::make_schedule(50);
    for (SamplerKind kind : {SamplerKind::ddpm, SamplerKind::ddim}) {
        for (double scale : {1.0, 1.5}) {
            SamplerConfig cfg{kind, 10, scale, 4};
            CachePlan plan = default_plan(sched, 1);
            const Array x = noise(5);
            CHECK(cached_sample(m, x, 1, plan, cfg, sched) == diffusion::sample(m, x, 1, cfg, sched));
            CHECK(uncached_sample(m, x, 1, cfg, sched) == diffusion::sample(m, x, 1, cfg, sched));
        }
    }
}

TEST_CASE("zero threshold forces every step global") {
    const SkipDiT m = live(2);
    const auto sched = diffusion::make_schedule(50);
    SamplerConfig cfg{SamplerKind::ddim, 20, 1.0, 0};
    CachePlan plan = default_plan(sched, 3);
    plan.error_record.assign(50, 0.01);
    plan.threshold = 0.0;
    CacheRunReport rep;
    const Array x = noise(6);
    CHECK(cached_sample(m, x, 0, plan, cfg, sched, &rep) == cached_sample(m, x, 0, default_plan(sched, 1), cfg, sched));
    for (const auto& d : rep.decisions) CHECK(d.kind != StepKind::local);
}

TEST_CASE("block-eval spot counts") {
    const auto sched = diffusion::make_schedule(50);
    SamplerConfig cfg{SamplerKind::ddim, 50, 1.0, 0};
    const auto ts = diffusion::sampler_timesteps(cfg, sched);
    CachePlan plan = default_plan(sched, 2);
    plan.t_hi = 50;
    plan.t_lo = 1;
    const BlockEvalCount c = count_block_evals(plan, ts, 12);
    CHECK(c.block_evals == 350);
    CHECK(c.full_steps == 25);
    CHECK(c.cached_steps == 25);
    CHECK(c.speedup == 600.0 / 350.0);

    plan.interval = 1;
    const BlockEvalCount none = count_block_evals(plan, ts, 12);
    CHECK(none.block_evals == 600);
    CHECK(none.speedup == 1.0);
}

TEST_CASE("schedule invariants over random plans") {
    Rng rng(11);
    const auto sched = diffusion::make_schedule(100);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> N(1, 6), steps(2, 100), hi(2, 100);
        SamplerConfig cfg{SamplerKind::ddim, steps(rng), 1.0, 0};
        const auto ts = diffusion::sampler_timesteps(cfg, sched);
        CachePlan p = default_plan(sched, N(rng));
        p.t_hi = hi(rng);
        p.t_lo = std::uniform_int_distribution<int>(1, p.t_hi - 1)(rng);
        for (auto& r : p.error_record) r = std::uniform_real_distribution<>(0, 0.05)(rng);
        for (int t : ts)
            if (std::uniform_real_distribution<>(0, 1)(rng) < 0.1) p.phase.insert(t);
        p.threshold = std::uniform_real_distribution<>(0, 0.1)(rng);
        const auto ds = plan_schedule(p, ts);
        int run = 0;
        for (std::size_t k = 0; k < ds.size(); ++k) {
            const auto& d = ds[k];
            if (!p.in_window(d.t)) CHECK(d.kind == StepKind::full);
            if (d.kind == StepKind::local) {
                ++run;
                CHECK(run <= p.interval - 1);
                CHECK(!p.phase.count(d.t));
                CHECK(d.error <= p.threshold);
                REQUIRE(k > 0);
                CHECK(ds[k - 1].kind != StepKind::full);
            } else {
                run = 0;
                CHECK(d.error == 0.0);
            }
        }
    }
}

TEST_CASE("budget is non-increasing in the interval") {
    const auto sched = diffusion::make_schedule(100);
    SamplerConfig cfg{SamplerKind::ddim, 50, 1.0, 0};
    const auto ts = diffusion::sampler_timesteps(cfg, sched);
    Rng rng(3);
    CachePlan p = default_plan(sched, 1);
    for (auto& r : p.error_record) r = std::uniform_real_distribution<>(0, 0.05)(rng);
    p.phase = {ts[10], ts[30]};
    std::uint64_t prev = ~0ull;
    for (int n = 1; n <= 10; ++n) {
        p.interval = n;
        const auto c = count_block_evals(p, ts, 8);
        CHECK(c.block_evals <= prev);
        prev = c.block_evals;
    }
}

TEST_CASE("runtime counter agrees with the analytic count") {
    const SkipDiT m = live(4);
    const auto sched = diffusion::make_schedule(40);
    Rng rng(17);
    for (int trial = 0; trial < 12; ++trial) {
        const double scales[] = {1.0, 0.0, 1.5};
        SamplerConfig cfg{trial % 2 ? SamplerKind::ddpm : SamplerKind::ddim, 8, scales[trial % 3],
                          static_cast<std::uint64_t>(trial)};
        const auto ts = diffusion::sampler_timesteps(cfg, sched);
        CachePlan p = default_plan(sched, 1 + trial % 4);
        p.level = 1 + trial % 3;
        p.t_hi = 40;
        p.t_lo = 1 + trial;
        for (auto& r : p.error_record) r = std::uniform_real_distribution<>(0, 0.02)(rng);
        p.threshold = 0.03;
        CacheRunReport rep;
        cached_sample(m, noise(trial), trial % 3, p, cfg, sched, &rep);
        const auto c = count_block_evals(p, ts, 6);
        const int branches = guidance_branches(cfg.cfg_scale);
        CHECK(rep.counter.blocks == branches * c.block_evals);
        CHECK(rep.counter.fusions == branches * c.fusion_evals);
    }
}

TEST_CASE("cached sampling rejects bad inputs") {
    const auto sched = diffusion::make_schedule(20);
    SamplerConfig cfg{SamplerKind::ddim, 5, 1.0, 0};
    ModelConfig vc = tiny();
    vc.variant = model::Variant::vanilla;
    CHECK_THROWS(cached_sample(SkipDiT::create(vc, 1), noise(1), 0, default_plan(sched, 2), cfg, sched));
    const SkipDiT m = live(5);
    CachePlan p = default_plan(sched, 2);
    p.t_hi = 30;
    CHECK_THROWS(cached_sample(m, noise(1), 0, p, cfg, sched));
    p = default_plan(sched, 2);
    p.level = 4;
    CHECK_THROWS(cached_sample(m, noise(1), 0, p, cfg, sched));
}

TEST_CASE("static interval baseline") {
    const SkipDiT m = live(6);
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 10, 1.0, 0};
    const Array x = noise(7);
    CHECK(static_interval_baseline(m, x, 0, 1, cfg, sched) == diffusion::sample(m, x, 0, cfg, sched));
    for (int n = 1; n <= 5; ++n) {
        model::EvalCounter c;
        static_interval_baseline(m, x, 0, n, cfg, sched, &c);
        CHECK(c.blocks == baseline_block_evals(10, n, 6));
        CHECK(c.blocks == static_cast<std::uint64_t>((10 + n - 1) / n * 6));
    }
    CHECK(baseline_interval_for_budget(50, 8, 200) == 2);
    CHECK(baseline_interval_for_budget(50, 8, 201) == 1);
    CHECK(baseline_interval_for_budget(50, 8, 137) == 2);
    CHECK(baseline_interval_for_budget(50, 8, 136) == 3);
}

TEST_CASE("evenly spread static baseline") {
    CHECK(even_refresh_steps(10, 4) == std::vector<bool>{1, 0, 1, 0, 0, 1, 0, 1, 0, 0});
    CHECK(even_refresh_steps(5, 5) == std::vector<bool>(5, true));
    CHECK_THROWS(even_refresh_steps(5, 0));
    CHECK_THROWS(even_refresh_steps(5, 6));
    for (int steps = 1; steps <= 40; ++steps) {
        for (int evals = 1; evals <= steps; ++evals) {
            const auto r = even_refresh_steps(steps, evals);
            int marked = 0;
            for (bool b : r) marked += b;
            CHECK(marked == evals);
            CHECK(r.front());
        }
    }

    CHECK(baseline_evals_for_budget(50, 8, 350) == 44);
    CHECK(baseline_evals_for_budget(50, 8, 352) == 44);
    CHECK(baseline_evals_for_budget(50, 8, 353) == 45);
    CHECK(baseline_evals_for_budget(50, 8, 1) == 1);
    CHECK(baseline_evals_for_budget(50, 8, 10000) == 50);
    for (std::uint64_t budget = 1; budget <= 400; ++budget) {
        const int k = baseline_evals_for_budget(50, 8, budget);
        CHECK(static_cast<std::uint64_t>(k) * 8 >= budget);
        CHECK(static_cast<std::uint64_t>(k - 1) * 8 < budget);
    }

    const SkipDiT m = live(6);
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 10, 1.5, 0};
    const Array x = noise(7);
    model::EvalCounter c;
    const Array all = static_schedule_baseline(m, x, 0, std::vector<bool>(10, true), cfg, sched, &c);
    CHECK(all == diffusion::sample(m, x, 0, cfg, sched));
    CHECK(c.blocks == 2u * 10 * 6);
    // a mask matching a fixed interval reproduces the interval baseline
    std::vector<bool> every3(10, false);
    for (int k = 0; k < 10; k += 3) every3[k] = true;
    CHECK(static_schedule_baseline(m, x, 0, every3, cfg, sched) == static_interval_baseline(m, x, 0, 3, cfg, sched));
    model::EvalCounter c4;
    static_schedule_baseline(m, x, 0, even_refresh_steps(10, 4), cfg, sched, &c4);
    CHECK(c4.blocks == 2u * 4 * 6);
    CHECK_THROWS(static_schedule_baseline(m, x, 0, std::vector<bool>(9, true), cfg, sched));
}

TEST_CASE("error record calibration") {
    const SkipDiT m = live(8);
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 10, 1.0, 0};
    std::vector<CalibrationSample> samples{{noise(1), 0}, {noise(2), 2}};
    const auto R = calibrate_error_record(m, samples, cfg, sched);
    CHECK(R.size() == 30);
    CHECK(R == calibrate_error_record(m, samples, cfg, sched));
    for (double r : R) CHECK(r >= 0.0);
    CHECK(R[29] == 0.0);

    // replay: dumped deep features, cosine recomputed independently
    const auto ts = diffusion::sampler_timesteps(cfg, sched);
    std::vector<double> step(ts.size(), 0.0);
    for (const auto& s : samples) {
        const auto tr = deep_feature_trace(m, s, 1, cfg, sched);
        for (std::size_t k = 1; k < ts.size(); ++k) step[k] += (1.0 - cos_oracle(tr[k], tr[k - 1])) / 2.0;
    }
    for (std::size_t k = 1; k < ts.size(); ++k) {
        for (int t = ts[k]; t < ts[k - 1]; ++t) CHECK(std::abs(R[t - 1] - step[k]) < 1e-12);
    }
    CHECK_THROWS(calibrate_error_record(m, {}, cfg, sched));

    const auto flat = calibrate_error_record(constant_feature_model(), {{noise(3), 1}}, cfg, sched);
    for (double r : flat) CHECK(r < 1e-12);
}

TEST_CASE("phase selection") {
    const std::vector<int> ts{50, 40, 30, 20, 10, 1};
    CHECK(select_phase(ts, std::vector<double>(6, 0.3), 0.0).empty());
    CHECK(select_phase(ts, std::vector<double>(6, 0.3), 1.0) == std::set<int>(ts.begin(), ts.end()));
    CHECK(select_phase(ts, std::vector<double>(6, 0.3), 0.5) == std::set<int>{50, 40, 30});
    CHECK(select_phase(ts, {0.1, 0.5, 0.1, 0.4, 0.1, 0.0}, 0.5) == std::set<int>{40, 20, 50});
    CHECK_THROWS(select_phase(ts, std::vector<double>(6, 0.3), 1.5));

    const SkipDiT m = live(9);
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 10, 1.0, 0};
    const auto P = detect_dynamic_phase(m, {{noise(4), 1}}, 0.3, cfg, sched);
    CHECK(P.size() == 3);
    CHECK(detect_dynamic_phase(m, {{noise(4), 1}}, 0.0, cfg, sched).empty());
}

TEST_CASE("feature heatmap") {
    const SkipDiT m = live(10);
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 7, 1.0, 0};
    const CalibrationSample s{noise(5), 2};
    const FeatureHeatmap h = feature_heatmap(m, s, cfg, sched);
    REQUIRE(h.d.size() == 6);
    for (const auto& row : h.d) CHECK(row.size() == 6);

    SampleTrace trace;
    uncached_sample(m, s.x_T, s.label, cfg, sched, nullptr, &trace);
    const auto ts = diffusion::sampler_timesteps(cfg, sched);
    const std::vector<Array>& xs = trace.inputs;
    for (std::size_t k = 1; k < ts.size(); ++k) {
        const auto a = m.forward_instrumented(xs[k], ts[k], s.label);
        const auto b = m.forward_instrumented(xs[k - 1], ts[k - 1], s.label);
        for (int l = 0; l < 6; ++l) CHECK(std::abs(h.d[l][k - 1] - (1.0 - cos_oracle(a.block_outputs[l], b.block_outputs[l]))) < 1e-12);
    }

    const FeatureHeatmap z = feature_heatmap(constant_feature_model(), s, cfg, sched);
    for (const auto& row : z.d)
        for (double v : row) CHECK(std::abs(v) < 1e-12);

    std::ostringstream os;
    write_heatmap_csv(os, h);
    CHECK(os.str().rfind("layer,t", 0) == 0);
}

TEST_CASE("skip level selection") {
    const auto sched = diffusion::make_schedule(30);
    SamplerConfig cfg{SamplerKind::ddim, 6, 1.0, 0};
    const std::vector<CalibrationSample> samples{{noise(6), 0}, {noise(7), 1}};
    const LevelSelection flat = select_skip_level(constant_feature_model(), samples, cfg, sched);
    CHECK(flat.level == 1);
    CHECK(flat.table.size() == 3);

    const SkipDiT m = live(11);
    const LevelSelection sel = select_skip_level(m, samples, cfg, sched);
    CHECK(sel.table.size() == candidate_levels(6).size());
    for (std::size_t j = 0; j < sel.table.size(); ++j) {
        double sum = 0.0;
        int n = 0;
        for (const auto& s : samples) {
            const auto tr = deep_feature_trace(m, s, sel.table[j].level, cfg, sched);
            for (std::size_t k = 1; k < tr.size(); ++k, ++n) sum += cos_oracle(tr[k], tr[k - 1]);
        }
        CHECK(std::abs(sel.table[j].similarity - sum / n) < 1e-12);
        CHECK(sel.table[sel.level - 1].similarity >= sel.table[j].similarity);
    }
    CHECK(candidate_levels(4) == std::vector<int>{1, 2});
}

TEST_CASE("plan JSON and record CSV round trip") {
    const auto sched = diffusion::make_schedule(10);
    CachePlan p = default_plan(sched, 3);
    p.error_record = {0, 0.1, 0.2, 1.0 / 3.0, 0, 0, 0, 0, 0, 0.5};
    p.phase = {9, 2};
    p.threshold = 0.25;
    p.level = 2;
    const CachePlan q = plan_from_json(plan_to_json(p));
    CHECK(q.interval == 3);
    CHECK(q.t_hi == p.t_hi);
    CHECK(q.t_lo == p.t_lo);
    CHECK(q.error_record == p.error_record);
    CHECK(q.phase == p.phase);
    CHECK(q.threshold == 0.25);
    CHECK(q.level == 2);
    CHECK(std::isinf(plan_from_json(plan_to_json(default_plan(sched, 2))).threshold));

    std::stringstream ss;
    write_error_record_csv(ss, p.error_record);
    CHECK(read_error_record_csv(ss) == p.error_record);
}
