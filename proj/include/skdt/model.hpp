#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "skdt/array.hpp"
#include "skdt/autodiff.hpp"
#include "skdt/diffusion.hpp"

namespace skdt::model {

enum class Variant { vanilla, skip };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
    int image_size = 16;
    int channels = 1;
    int patch = 4;
    int hidden = 64;
    int depth = 8;
    int heads = 4;
    int num_classes = 10;
    int mlp_ratio = 4;
    int freq_dim = 64;
    Variant variant = Variant::skip;
    bool fusion_norm_affine = true;

    void validate() const;
    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch * patch * channels; }
    int num_skips() const { return variant == Variant::skip ? depth / 2 : 0; }
    Shape image_shape() const {
        return {static_cast<std::size_t>(channels), static_cast<std::size_t>(image_size),
                static_cast<std::size_t>(image_size)};
    }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Counts work done by forward passes.
struct EvalCounter {
    std::uint64_t blocks = 0;
    std::uint64_t fusions = 0;
    std::uint64_t forwards = 0;
};

/// Parameters lifted into graph leaves.
class Bindings {
   public:
    static Bindings constants(const ParamSet& params);
    /// Names in `trainable` become gradient leaves; the rest stay constant.
    static Bindings trainable(const ParamSet& params, const std::set<std::string>& trainable);

    const Var& operator[](const std::string& name) const;
    /// Replaces the node bound to an existing name.
    void rebind(const std::string& name, Var v);
    const std::map<std::string, Var>& trainable_vars() const { return trainable_; }

   private:
    std::map<std::string, Var> vars_;
    std::map<std::string, Var> trainable_;
};

/// One consumed feature in forward order.
struct Feature {
    enum class Kind { block_output, fused_input };
    Kind kind;
    int index;  // block number, 1-based
    Array value;
};

struct InstrumentedOutput {
    Array prediction;
    std::vector<Feature> features;
    /// Output of block l at [l - 1].
    std::vector<Array> block_outputs;
};

/// Optional observers for SkipDiT::forward.
struct ForwardTaps {
    int capture_block = 0;  // block whose output to keep, 0 = none
    Array* captured = nullptr;
    InstrumentedOutput* instrumented = nullptr;
};

std::string block_prefix(int l);
std::string skip_prefix(int i);

class SkipDiT : public diffusion::NoisePredictor {
   public:
    SkipDiT(ModelConfig cfg, ParamSet params, bool bypass = false);

    /// Fresh model. Parameters are drawn per name, so two variants created
    /// with the same seed share every non-fusion weight.
    static SkipDiT create(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& mutable_params();
    void set_params(ParamSet params);

    bool bypass() const { return bypass_; }
    void set_bypass(bool on);

    Array predict(const Array& x_t, int t, int label) const override;
    int num_classes() const override { return cfg_.num_classes; }

    Array predict_counted(const Array& x_t, int t, int label, EvalCounter* counter) const;
    InstrumentedOutput forward_instrumented(const Array& x_t, int t, int label) const;

    /// Full inference that also returns the output of block L - level, the
    /// deep operand of skip branch `level`.
    Array predict_caching(const Array& x_t, int t, int label, int level, Array& deep_feature,
                          EvalCounter* counter = nullptr) const;
    /// Cached inference: blocks 1..level run fresh, the region between them is
    /// replaced by `deep_feature`, then blocks L+1-level..L run with fusion.
    Array predict_cached(const Array& x_t, int t, int label, int level, const Array& deep_feature,
                         EvalCounter* counter = nullptr) const;

    // Graph-level pieces, shared by inference and training.
    Var embed(const Bindings& b, const Var& image) const;
    Var condition(const Bindings& b, int t, int label) const;
    Var block(const Bindings& b, int l, const Var& x, const Var& cond, EvalCounter* counter = nullptr) const;
    Var fuse(const Bindings& b, int i, const Var& shallow, const Var& deep, EvalCounter* counter = nullptr) const;
    Var head(const Bindings& b, const Var& h, const Var& cond) const;

    Var forward(const Bindings& b, const Var& image, int t, int label, EvalCounter* counter = nullptr,
                const ForwardTaps& taps = {}) const;

    const Bindings& constant_bindings() const;

   private:
    void check_t(int t) const;

    ModelConfig cfg_;
    ParamSet params_;
    bool bypass_ = false;
    mutable std::shared_ptr<const Bindings> bound_;
    mutable std::shared_ptr<std::mutex> bound_mu_ = std::make_shared<std::mutex>();
};

/// Sinusoidal timestep features, shape (1, dim).
Array timestep_embedding(int t, int dim);

/// Token layout helpers: image (C,H,W) <-> tokens (N, p*p*C).
std::vector<std::size_t> patchify_index(const ModelConfig& cfg);
std::vector<std::size_t> unpatchify_index(const ModelConfig& cfg);

/// Block-level forward on plain arrays; x is (tokens, d) and cond is (d).
Array dit_block_forward(const SkipDiT& model, int l, const Array& x, const Array& cond);
/// Skip branch `i` on plain arrays.
Array skip_fuse(const SkipDiT& model, int i, const Array& shallow, const Array& deep);

/// Enables the fusion bypass so the skip model reproduces the vanilla model.
void init_passthrough_fusion(SkipDiT& model);

enum class FreezeMode { skip_only, all };
/// Trainable parameter names for the given mode.
std::set<std::string> freeze_mask(const SkipDiT& model, FreezeMode mode);
bool is_fusion_param(const std::string& name);

/// Skip model that takes every shared weight from `vanilla`; fusion weights
/// are freshly initialized from `seed`.
SkipDiT skip_from_vanilla(const SkipDiT& vanilla, std::uint64_t seed);

/// Overwrites the zero-initialized tensors (modulation, head) with N(0, stddev^2)
/// so an untrained model produces non-trivial outputs.
void randomize_zero_init(SkipDiT& model, std::uint64_t seed, double stddev = 0.02);

/// Writes `<path>` (SKDT1) and `<path>.json` (config + bypass state).
void save_checkpoint(const SkipDiT& model, const std::string& path);
SkipDiT load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& cfg, bool bypass);
ModelConfig config_from_json(const std::string& text, bool* bypass = nullptr);

}  // namespace skdt::model
