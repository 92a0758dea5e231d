#include "skdt/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "skdt/random.hpp"

namespace skdt::model {

using nlohmann::json;

std::string to_string(Variant v) { return v == Variant::skip ? "skip" : "vanilla"; }

Variant variant_from_string(const std::string& s) {
    if (s == "skip") return Variant::skip;
    if (s == "vanilla") return Variant::vanilla;
    throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
    if (image_size < 1 || channels < 1 || patch < 1 || hidden < 1 || heads < 1 || num_classes < 1 || mlp_ratio < 1)
        fail("all extents must be positive");
    if (depth < 2 || depth % 2 != 0) fail("depth must be even and >= 2");
    if (hidden % heads != 0) fail("hidden dim must be divisible by head count");
    if (image_size % patch != 0) fail("image size must be divisible by patch size");
    if (freq_dim < 2 || freq_dim % 2 != 0) fail("frequency dim must be even");
}

std::string block_prefix(int l) { return "blocks." + std::to_string(l) + "."; }
std::string skip_prefix(int i) { return "skips." + std::to_string(i) + "."; }

bool is_fusion_param(const std::string& name) { return name.rfind("skips.", 0) == 0; }

Bindings Bindings::constants(const ParamSet& params) {
    Bindings b;
    for (const auto& [name, arr] : params) b.vars_.emplace(name, Var::constant(arr));
    return b;
}

Bindings Bindings::trainable(const ParamSet& params, const std::set<std::string>& trainable) {
    Bindings b;
    for (const auto& [name, arr] : params) {
        const bool train = trainable.count(name) != 0;
        Var v = Var::leaf(arr, train);
        if (train) b.trainable_.emplace(name, v);
        b.vars_.emplace(name, std::move(v));
    }
    return b;
}

const Var& Bindings::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("model: missing parameter '" + name + "'");
    return it->second;
}

void Bindings::rebind(const std::string& name, Var v) {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("model: missing parameter '" + name + "'");
    if (v.shape() != it->second.shape()) throw ShapeError("rebind: shape mismatch for '" + name + "'");
    it->second = std::move(v);
}

Array timestep_embedding(int t, int dim) {
    const int half = dim / 2;
    Array out(Shape{1, static_cast<std::size_t>(dim)});
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / static_cast<double>(half));
        out[i] = std::cos(t * freq);
        out[half + i] = std::sin(t * freq);
    }
    return out;
}

std::vector<std::size_t> patchify_index(const ModelConfig& cfg) {
    const std::size_t p = cfg.patch, g = cfg.grid(), C = cfg.channels, H = cfg.image_size, W = cfg.image_size;
    std::vector<std::size_t> idx;
    idx.reserve(C * H * W);
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        idx.push_back(c * H * W + (gy * p + py) * W + gx * p + px);
    return idx;
}

std::vector<std::size_t> unpatchify_index(const ModelConfig& cfg) {
    const auto fwd = patchify_index(cfg);
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return inv;
}

namespace {

std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng param_rng(std::uint64_t seed, const std::string& name) { return Rng(mix_seed(seed, name_hash(name))); }

Array xavier(std::uint64_t seed, const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    Rng rng = param_rng(seed, name);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(Shape{fan_in, fan_out}, rng, -a, a);
}

Array normal(std::uint64_t seed, const std::string& name, Shape shape, double stddev) {
    Rng rng = param_rng(seed, name);
    return randn(shape, rng, stddev);
}

void add_fusion_params(ParamSet& ps, const ModelConfig& cfg, std::uint64_t seed) {
    const std::size_t d = cfg.hidden;
    for (int i = 1; i <= cfg.depth / 2; ++i) {
        const std::string p = skip_prefix(i);
        if (cfg.fusion_norm_affine) {
            ps.add(p + "norm.g", Array(Shape{2 * d}, 1.0));
            ps.add(p + "norm.b", Array(Shape{2 * d}));
        }
        ps.add(p + "linear.w", xavier(seed, p + "linear.w", 2 * d, d));
        ps.add(p + "linear.b", Array(Shape{d}));
    }
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    const std::size_t d = cfg.hidden, pd = cfg.patch_dim(), n = cfg.tokens(), f = cfg.freq_dim;
    const std::size_t hid = d * cfg.mlp_ratio;
    ParamSet ps;
    ps.add("patch_embed.w", xavier(seed, "patch_embed.w", pd, d));
    ps.add("patch_embed.b", Array(Shape{d}));
    ps.add("pos_embed", normal(seed, "pos_embed", {n, d}, 0.02));
    ps.add("t_embed.w1", normal(seed, "t_embed.w1", {f, d}, 0.02));
    ps.add("t_embed.b1", Array(Shape{d}));
    ps.add("t_embed.w2", normal(seed, "t_embed.w2", {d, d}, 0.02));
    ps.add("t_embed.b2", Array(Shape{d}));
    ps.add("class_embed", normal(seed, "class_embed", {static_cast<std::size_t>(cfg.num_classes) + 1, d}, 0.02));
    for (int l = 1; l <= cfg.depth; ++l) {
        const std::string p = block_prefix(l);
        ps.add(p + "adaln.w", Array(Shape{d, 6 * d}));
        ps.add(p + "adaln.b", Array(Shape{6 * d}));
        ps.add(p + "attn.qkv.w", xavier(seed, p + "attn.qkv.w", d, 3 * d));
        ps.add(p + "attn.qkv.b", Array(Shape{3 * d}));
        ps.add(p + "attn.proj.w", xavier(seed, p + "attn.proj.w", d, d));
        ps.add(p + "attn.proj.b", Array(Shape{d}));
        ps.add(p + "mlp.fc1.w", xavier(seed, p + "mlp.fc1.w", d, hid));
        ps.add(p + "mlp.fc1.b", Array(Shape{hid}));
        ps.add(p + "mlp.fc2.w", xavier(seed, p + "mlp.fc2.w", hid, d));
        ps.add(p + "mlp.fc2.b", Array(Shape{d}));
    }
    if (cfg.variant == Variant::skip) add_fusion_params(ps, cfg, seed);
    ps.add("final.adaln.w", Array(Shape{d, 2 * d}));
    ps.add("final.adaln.b", Array(Shape{2 * d}));
    ps.add("final.linear.w", Array(Shape{d, pd}));
    ps.add("final.linear.b", Array(Shape{pd}));
    return ps;
}

// (x * (1 + scale)) + shift with (d)-vectors broadcast over tokens.
Var modulate(const Var& x, const Var& shift, const Var& scale) {
    return ad::add(ad::add(x, ad::mul(x, scale)), shift);
}

}  // namespace

SkipDiT::SkipDiT(ModelConfig cfg, ParamSet params, bool bypass)
    : cfg_(cfg), params_(std::move(params)), bypass_(bypass) {
    cfg_.validate();
    if (bypass_ && cfg_.variant != Variant::skip) throw std::invalid_argument("bypass requires the skip variant");
    const ParamSet expected = init_params(cfg_, 0);
    if (!params_.same_layout(expected)) throw std::invalid_argument("SkipDiT: parameters do not match config layout");
}

SkipDiT SkipDiT::create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return SkipDiT(cfg, init_params(cfg, seed));
}

ParamSet& SkipDiT::mutable_params() {
    bound_.reset();
    return params_;
}

void SkipDiT::set_params(ParamSet params) {
    if (!params.same_layout(params_)) throw std::invalid_argument("SkipDiT::set_params: layout mismatch");
    params_ = std::move(params);
    bound_.reset();
}

void SkipDiT::set_bypass(bool on) {
    if (on && cfg_.variant != Variant::skip) throw std::invalid_argument("bypass requires the skip variant");
    bypass_ = on;
}

const Bindings& SkipDiT::constant_bindings() const {
    std::lock_guard<std::mutex> lock(*bound_mu_);
    if (!bound_) bound_ = std::make_shared<const Bindings>(Bindings::constants(params_));
    return *bound_;
}

void SkipDiT::check_t(int t) const {
    if (t < 0) throw std::out_of_range("model: negative timestep " + std::to_string(t));
}

Var SkipDiT::embed(const Bindings& b, const Var& image) const {
    if (image.value().size() != shape_numel(cfg_.image_shape())) {
        throw ShapeError("embed: image " + shape_str(image.value().shape()) + " vs expected " +
                         shape_str(cfg_.image_shape()));
    }
    const Shape tok_shape{static_cast<std::size_t>(cfg_.tokens()), static_cast<std::size_t>(cfg_.patch_dim())};
    Var patches = ad::take(image, patchify_index(cfg_), tok_shape);
    Var h = ad::add(ad::matmul(patches, b["patch_embed.w"]), b["patch_embed.b"]);
    return ad::add(h, b["pos_embed"]);
}

Var SkipDiT::condition(const Bindings& b, int t, int label) const {
    check_t(t);
    diffusion::check_label(*this, label);
    Var te = Var::constant(timestep_embedding(t, cfg_.freq_dim));
    Var h = ad::silu(ad::add(ad::matmul(te, b["t_embed.w1"]), b["t_embed.b1"]));
    h = ad::add(ad::matmul(h, b["t_embed.w2"]), b["t_embed.b2"]);
    Var cls = ad::slice(b["class_embed"], 0, static_cast<std::size_t>(label), static_cast<std::size_t>(label) + 1);
    return ad::reshape(ad::add(h, cls), Shape{static_cast<std::size_t>(cfg_.hidden)});
}

Var SkipDiT::block(const Bindings& b, int l, const Var& x, const Var& cond, EvalCounter* counter) const {
    const std::size_t d = cfg_.hidden, n = cfg_.tokens();
    if (l < 1 || l > cfg_.depth) throw std::out_of_range("block index " + std::to_string(l));
    if (x.value().shape() != Shape{n, d}) {
        throw ShapeError("dit_block: x " + shape_str(x.value().shape()) + " vs expected " + shape_str({n, d}));
    }
    if (cond.value().shape() != Shape{d}) throw ShapeError("dit_block: cond " + shape_str(cond.value().shape()));
    if (counter) ++counter->blocks;
    const std::string p = block_prefix(l);

    Var c = ad::reshape(ad::silu(cond), Shape{1, d});
    Var mod = ad::reshape(ad::add(ad::matmul(c, b[p + "adaln.w"]), b[p + "adaln.b"]), Shape{6 * d});
    auto chunk = [&](std::size_t k) { return ad::slice(mod, 0, k * d, (k + 1) * d); };
    Var shift_msa = chunk(0), scale_msa = chunk(1), gate_msa = chunk(2);
    Var shift_mlp = chunk(3), scale_mlp = chunk(4), gate_mlp = chunk(5);

    // self-attention
    Var h = modulate(ad::layer_norm(x), shift_msa, scale_msa);
    Var qkv = ad::add(ad::matmul(h, b[p + "attn.qkv.w"]), b[p + "attn.qkv.b"]);
    const std::size_t heads = cfg_.heads, dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t j = 0; j < heads; ++j) {
        Var q = ad::slice(qkv, 1, j * dh, (j + 1) * dh);
        Var k = ad::slice(qkv, 1, d + j * dh, d + (j + 1) * dh);
        Var v = ad::slice(qkv, 1, 2 * d + j * dh, 2 * d + (j + 1) * dh);
        Var att = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
        outs.push_back(ad::matmul(att, v));
    }
    Var attn = ad::add(ad::matmul(ad::concat_last(outs), b[p + "attn.proj.w"]), b[p + "attn.proj.b"]);
    Var y = ad::add(x, ad::mul(attn, gate_msa));

    // feed-forward
    Var h2 = modulate(ad::layer_norm(y), shift_mlp, scale_mlp);
    Var m = ad::gelu(ad::add(ad::matmul(h2, b[p + "mlp.fc1.w"]), b[p + "mlp.fc1.b"]));
    m = ad::add(ad::matmul(m, b[p + "mlp.fc2.w"]), b[p + "mlp.fc2.b"]);
    return ad::add(y, ad::mul(m, gate_mlp));
}

Var SkipDiT::fuse(const Bindings& b, int i, const Var& shallow, const Var& deep, EvalCounter* counter) const {
    if (cfg_.variant != Variant::skip) throw std::logic_error("skip_fuse: vanilla model has no skip branches");
    if (i < 1 || i > cfg_.depth / 2) throw std::out_of_range("skip branch index " + std::to_string(i));
    if (shallow.value().shape() != deep.value().shape() || shallow.value().rank() != 2 ||
        shallow.value().last_dim() != static_cast<std::size_t>(cfg_.hidden)) {
        throw ShapeError("skip_fuse: shallow " + shape_str(shallow.value().shape()) + " vs deep " +
                         shape_str(deep.value().shape()));
    }
    if (bypass_) return deep;
    if (counter) ++counter->fusions;
    const std::string p = skip_prefix(i);
    Var n = ad::layer_norm(ad::concat_last({shallow, deep}));
    if (cfg_.fusion_norm_affine) n = ad::add(ad::mul(n, b[p + "norm.g"]), b[p + "norm.b"]);
    return ad::add(ad::matmul(n, b[p + "linear.w"]), b[p + "linear.b"]);
}

Var SkipDiT::head(const Bindings& b, const Var& h, const Var& cond) const {
    const std::size_t d = cfg_.hidden;
    Var c = ad::reshape(ad::silu(cond), Shape{1, d});
    Var mod = ad::reshape(ad::add(ad::matmul(c, b["final.adaln.w"]), b["final.adaln.b"]), Shape{2 * d});
    Var shift = ad::slice(mod, 0, 0, d), scale = ad::slice(mod, 0, d, 2 * d);
    Var out = ad::add(ad::matmul(modulate(ad::layer_norm(h), shift, scale), b["final.linear.w"]), b["final.linear.b"]);
    return ad::take(out, unpatchify_index(cfg_), cfg_.image_shape());
}

Var SkipDiT::forward(const Bindings& b, const Var& image, int t, int label, EvalCounter* counter,
                     const ForwardTaps& taps) const {
    if (counter) ++counter->forwards;
    const int L = cfg_.depth;
    Var cond = condition(b, t, label);
    Var h = embed(b, image);
    std::vector<Var> shallow;
    auto record = [&](Feature::Kind kind, int l, const Var& v) {
        if (taps.instrumented) taps.instrumented->features.push_back({kind, l, v.value()});
    };
    for (int l = 1; l <= L; ++l) {
        Var in = h;
        if (cfg_.variant == Variant::skip && l > L / 2) {
            const int i = L + 1 - l;
            in = fuse(b, i, shallow[i - 1], h, counter);
            record(Feature::Kind::fused_input, l, in);
        }
        h = block(b, l, in, cond, counter);
        record(Feature::Kind::block_output, l, h);
        if (taps.instrumented) taps.instrumented->block_outputs.push_back(h.value());
        if (l == taps.capture_block && taps.captured) *taps.captured = h.value();
        if (cfg_.variant == Variant::skip && l <= L / 2) shallow.push_back(h);
    }
    return head(b, h, cond);
}

Array SkipDiT::predict(const Array& x_t, int t, int label) const { return predict_counted(x_t, t, label, nullptr); }

Array SkipDiT::predict_counted(const Array& x_t, int t, int label, EvalCounter* counter) const {
    return forward(constant_bindings(), Var::constant(x_t), t, label, counter).value();
}

InstrumentedOutput SkipDiT::forward_instrumented(const Array& x_t, int t, int label) const {
    InstrumentedOutput out;
    ForwardTaps taps;
    taps.instrumented = &out;
    out.prediction = forward(constant_bindings(), Var::constant(x_t), t, label, nullptr, taps).value();
    return out;
}

Array SkipDiT::predict_caching(const Array& x_t, int t, int label, int level, Array& deep_feature,
                               EvalCounter* counter) const {
    if (level < 1 || level > cfg_.depth / 2) throw std::out_of_range("cache level " + std::to_string(level));
    ForwardTaps taps;
    taps.capture_block = cfg_.depth - level;
    taps.captured = &deep_feature;
    return forward(constant_bindings(), Var::constant(x_t), t, label, counter, taps).value();
}

Array SkipDiT::predict_cached(const Array& x_t, int t, int label, int level, const Array& deep_feature,
                              EvalCounter* counter) const {
    if (cfg_.variant != Variant::skip) throw std::logic_error("cached inference requires the skip variant");
    const int L = cfg_.depth;
    if (level < 1 || level > L / 2) throw std::out_of_range("cache level " + std::to_string(level));
    const Bindings& b = constant_bindings();
    if (counter) ++counter->forwards;
    Var cond = condition(b, t, label);
    Var h = embed(b, Var::constant(x_t));
    std::vector<Var> shallow;
    for (int l = 1; l <= level; ++l) {
        h = block(b, l, h, cond, counter);
        shallow.push_back(h);
    }
    h = Var::constant(deep_feature);
    for (int l = L + 1 - level; l <= L; ++l) {
        const int i = L + 1 - l;
        h = block(b, l, fuse(b, i, shallow[i - 1], h, counter), cond, counter);
    }
    return head(b, h, cond).value();
}

Array dit_block_forward(const SkipDiT& model, int l, const Array& x, const Array& cond) {
    return model.block(model.constant_bindings(), l, Var::constant(x), Var::constant(cond)).value();
}

Array skip_fuse(const SkipDiT& model, int i, const Array& shallow, const Array& deep) {
    return model.fuse(model.constant_bindings(), i, Var::constant(shallow), Var::constant(deep)).value();
}

void init_passthrough_fusion(SkipDiT& model) {
    if (model.config().variant != Variant::skip) {
        throw std::logic_error("init_passthrough_fusion: vanilla model has no skip branches");
    }
    model.set_bypass(true);
}

std::set<std::string> freeze_mask(const SkipDiT& model, FreezeMode mode) {
    std::set<std::string> out;
    if (mode == FreezeMode::skip_only && model.config().variant != Variant::skip) {
        throw std::logic_error("freeze_mask: skip-only mode requires the skip variant");
    }
    for (const auto& [name, _] : model.params()) {
        if (mode == FreezeMode::all || is_fusion_param(name)) out.insert(name);
    }
    return out;
}

SkipDiT skip_from_vanilla(const SkipDiT& vanilla, std::uint64_t seed) {
    ModelConfig cfg = vanilla.config();
    cfg.variant = Variant::skip;
    ParamSet ps = init_params(cfg, seed);
    for (auto& [name, arr] : ps) {
        if (is_fusion_param(name)) continue;
        if (!vanilla.params().contains(name)) throw std::invalid_argument("skip_from_vanilla: missing '" + name + "'");
        const Array& src = vanilla.params().get(name);
        if (src.shape() != arr.shape()) {
            throw ShapeError("skip_from_vanilla: '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                             shape_str(arr.shape()));
        }
        arr = src;
    }
    return SkipDiT(cfg, std::move(ps));
}

void randomize_zero_init(SkipDiT& model, std::uint64_t seed, double stddev) {
    ParamSet& ps = model.mutable_params();
    for (auto& [name, arr] : ps) {
        const bool zero_init = name.find("adaln") != std::string::npos || name.rfind("final.", 0) == 0;
        if (zero_init) arr = normal(seed, name, arr.shape(), stddev);
    }
}

std::string config_to_json(const ModelConfig& cfg, bool bypass) {
    json j = {{"image_size", cfg.image_size}, {"channels", cfg.channels},   {"patch", cfg.patch},
              {"hidden", cfg.hidden},         {"depth", cfg.depth},         {"heads", cfg.heads},
              {"num_classes", cfg.num_classes}, {"mlp_ratio", cfg.mlp_ratio}, {"freq_dim", cfg.freq_dim},
              {"variant", to_string(cfg.variant)}, {"fusion_norm_affine", cfg.fusion_norm_affine},
              {"bypass", bypass}};
    return j.dump(2);
}

ModelConfig config_from_json(const std::string& text, bool* bypass) {
    const json j = json::parse(text);
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.channels = j.value("channels", c.channels);
    c.patch = j.value("patch", c.patch);
    c.hidden = j.value("hidden", c.hidden);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.freq_dim = j.value("freq_dim", c.freq_dim);
    c.variant = variant_from_string(j.value("variant", std::string("skip")));
    c.fusion_norm_affine = j.value("fusion_norm_affine", c.fusion_norm_affine);
    if (bypass) *bypass = j.value("bypass", false);
    c.validate();
    return c;
}

void save_checkpoint(const SkipDiT& model, const std::string& path) {
    save_archive(path, model.params());
    std::ofstream os(path + ".json");
    if (!os) throw std::runtime_error("cannot write '" + path + ".json'");
    os << config_to_json(model.config(), model.bypass()) << '\n';
}

SkipDiT load_checkpoint(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw std::runtime_error("cannot read '" + path + ".json'");
    std::stringstream ss;
    ss << is.rdbuf();
    bool bypass = false;
    ModelConfig cfg = config_from_json(ss.str(), &bypass);
    return SkipDiT(cfg, load_archive(path), bypass);
}

}  // namespace skdt::model
