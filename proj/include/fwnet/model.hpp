// Hierarchical classifier: patch embedding, stages of alternating window-attention
// and filter blocks, patch merging between stages, pooled linear head.
//
// Within a stage, even-indexed blocks are attention blocks
//     x̂ = x + WMSA(LN(x)),        out = x̂ + FFN(LN(x̂))
// and odd-indexed blocks are filter blocks
//     x̂ = x + CA(FE(LN(x))),      out = x̂ + FFN(LN(x̂))
// where FE is the frequency filter and CA the channel gate (ECA, SE or none).
// The `win` variant drops the FE/CA branch entirely, leaving x̂ = x.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fwnet/attention.hpp"
#include "fwnet/channels.hpp"
#include "fwnet/spectral.hpp"
#include "fwnet/tensor.hpp"

namespace fwnet {

enum class Variant { Win, FwNet, FwNetSe, FwNetEca };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
    std::size_t patch = 4;
    std::size_t in_chans = 3;
    std::size_t embed_dim = 96;
    std::vector<std::size_t> depths{2, 2, 6, 2};
    std::size_t window = 7;
    std::vector<std::size_t> heads;  // per stage; empty means max(1, dim/32)
    std::size_t ffn_ratio = 4;
    std::size_t num_classes = 1000;
    Variant variant = Variant::FwNetEca;
    std::size_t image_size = 224;
    std::size_t se_reduction = kSeReduction;

    /// Tiny / small / base settings ('t', 's', 'b').
    static ModelConfig preset(char size);
    /// Toy classifier for 56×56 inputs: dim 32, depths [2,2], window 7, 4 classes.
    static ModelConfig mini();

    void validate() const;

    std::size_t num_stages() const { return depths.size(); }
    std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }
    std::size_t stage_resolution(std::size_t s) const { return (image_size / patch) >> s; }
    std::size_t stage_heads(std::size_t s) const;
    std::size_t final_dim() const { return stage_dim(num_stages() - 1); }

    /// key=value lines, the checkpoint's config block.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
    RealTensor gamma;
    RealTensor beta;
    static LayerNormParams identity(std::size_t c);
};

struct FfnParams {
    RealTensor w1;  // [C, rC]
    RealTensor b1;
    RealTensor w2;  // [rC, C]
    RealTensor b2;
    static FfnParams zeros(std::size_t c, std::size_t ratio);
};

struct AttnBlock {
    LayerNormParams norm1;
    AttentionParams attn;
    LayerNormParams norm2;
    FfnParams ffn;
};

struct FilterBlock {
    std::optional<LayerNormParams> norm1;  // absent for the win variant
    std::optional<FilterWeights> filter;   // absent for the win variant
    std::optional<EcaParams> eca;
    std::optional<SeParams> se;
    LayerNormParams norm2;
    FfnParams ffn;
};

using Block = std::variant<AttnBlock, FilterBlock>;

struct PatchEmbedParams {
    RealTensor w;  // [patch²·in_chans, C]
    RealTensor b;  // [C]
    LayerNormParams norm;
};

struct PatchMergeParams {
    LayerNormParams norm;  // over 4C
    RealTensor w;          // [4C, 2C], no bias
};

struct HeadParams {
    LayerNormParams norm;
    RealTensor w;  // [C, classes]
    RealTensor b;  // [classes]
};

struct Stage {
    std::vector<Block> blocks;
    std::optional<PatchMergeParams> merge;
};

struct FwNetModel {
    ModelConfig config;
    PatchEmbedParams embed;
    std::vector<Stage> stages;
    HeadParams head;
};

/// Model with the config's structure and every parameter zero (LN gammas included).
FwNetModel zeros_like(const ModelConfig& config);
FwNetModel zeros_like(const FwNetModel& model);

/// Truncated-normal (σ = 0.02) linear weights, zero biases, identity layer norms,
/// filter weights 1 + complex noise of σ = 0.02. Deterministic in `seed`.
FwNetModel init_params(const ModelConfig& config, std::uint64_t seed);

// -- parameter enumeration ---------------------------------------------------

struct ParamRef {
    std::string name;
    Shape shape;  // complex tensors report a trailing axis of 2
    std::span<double> values;
    bool decay = false;  // receives decoupled weight decay
};

struct ConstParamRef {
    std::string name;
    Shape shape;
    std::span<const double> values;
    bool decay = false;
};

/// Every learnable tensor in a fixed traversal order with dotted names.
std::vector<ParamRef> parameters(FwNetModel& model);
std::vector<ConstParamRef> parameters(const FwNetModel& model);
std::size_t parameter_count(const FwNetModel& model);

// -- layers --------------------------------------------------------------------

struct FfnCache {
    RealTensor input;
    RealTensor hidden;
    RealTensor act;
};

RealTensor ffn_forward(const RealTensor& x, const FfnParams& p, FfnCache* cache = nullptr);
RealTensor ffn_backward(const FfnParams& p, const FfnCache& cache, const RealTensor& grad_y,
                        FfnParams& grads);

struct PatchEmbedCache {
    RealTensor patches;  // [B, H/p, W/p, p²·in]
    LayerNormCache norm;
};

/// [B,H,W,in] image -> [B,H/p,W/p,C] tokens.
FeatureMap patch_embed(const RealTensor& image, const PatchEmbedParams& p, std::size_t patch,
                       PatchEmbedCache* cache = nullptr);
/// Returns the image gradient; adds parameter gradients into `grads`.
RealTensor patch_embed_backward(const PatchEmbedParams& p, std::size_t patch, const Shape& image_shape,
                                const PatchEmbedCache& cache, const FeatureMap& grad_y,
                                PatchEmbedParams& grads);

struct PatchMergeCache {
    RealTensor gathered;  // [B,H/2,W/2,4C]
    LayerNormCache norm;
    RealTensor normed;
};

FeatureMap patch_merge(const FeatureMap& x, const PatchMergeParams& p, PatchMergeCache* cache = nullptr);
FeatureMap patch_merge_backward(const PatchMergeParams& p, const Shape& input_shape,
                                const PatchMergeCache& cache, const FeatureMap& grad_y,
                                PatchMergeParams& grads);

struct AttnBlockCache {
    LayerNormCache norm1;
    std::size_t rows = 0, cols = 0;
    WmsaCache attn;
    LayerNormCache norm2;
    FfnCache ffn;
};

FeatureMap attn_block_forward(const FeatureMap& x, const AttnBlock& p, AttnBlockCache* cache = nullptr);
FeatureMap attn_block_backward(const AttnBlock& p, const AttnBlockCache& cache, const FeatureMap& grad_y,
                               AttnBlock& grads);

struct FilterBlockCache {
    LayerNormCache norm1;
    FeatureMap normed;
    FilterCache fe;
    FeatureMap filtered;
    EcaCache eca;
    SeCache se;
    LayerNormCache norm2;
    FfnCache ffn;
};

FeatureMap filter_block_forward(const FeatureMap& x, const FilterBlock& p, FilterBlockCache* cache = nullptr);
FeatureMap filter_block_backward(const FilterBlock& p, const FilterBlockCache& cache,
                                 const FeatureMap& grad_y, FilterBlock& grads);

struct HeadCache {
    LayerNormCache norm;
    Shape token_shape;
    RealTensor pooled;
};

RealTensor head_forward(const FeatureMap& x, const HeadParams& p, HeadCache* cache = nullptr);
FeatureMap head_backward(const HeadParams& p, const HeadCache& cache, const RealTensor& grad_logits,
                         HeadParams& grads);

// -- whole model ---------------------------------------------------------------

using BlockCache = std::variant<AttnBlockCache, FilterBlockCache>;

/// Intermediates retained by a forward pass for the reverse pass.
struct ForwardTrace {
    Shape image_shape;
    PatchEmbedCache embed;
    std::vector<std::vector<BlockCache>> blocks;
    std::vector<std::vector<FeatureMap>> block_outputs;
    std::vector<std::optional<PatchMergeCache>> merges;
    std::vector<Shape> merge_inputs;
    HeadCache head;
    RealTensor logits;
};

/// [B,H,W,in] -> [B, classes].
RealTensor model_forward(const RealTensor& image, const FwNetModel& model, ForwardTrace* trace = nullptr);

/// Gradients of every block output, filled by model_backward_from_logits when requested.
using BlockOutputGrads = std::vector<std::vector<FeatureMap>>;

/// Reverse pass from a logits gradient; adds into `grads`.
void model_backward_from_logits(const FwNetModel& model, const ForwardTrace& trace,
                                const RealTensor& grad_logits, FwNetModel& grads,
                                BlockOutputGrads* block_grads = nullptr);

struct LossAndGrads {
    double loss = 0.0;
    FwNetModel grads;
    RealTensor logits;
};

/// Mean softmax cross-entropy over the batch and its full parameter gradient.
LossAndGrads model_backward(const RealTensor& image, const std::vector<std::size_t>& labels,
                            const FwNetModel& model);

/// Mean cross-entropy; writes (softmax − one_hot)/B into grad_logits when non-null.
double cross_entropy(const RealTensor& logits, const std::vector<std::size_t>& labels,
                     RealTensor* grad_logits = nullptr);

// -- optimiser -------------------------------------------------------------------

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam step over matching parameter lists.
void adamw_update(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
                  AdamState& state, const AdamWOptions& opt);

void adamw_step(FwNetModel& model, const FwNetModel& grads, AdamState& state, const AdamWOptions& opt);

}  // namespace fwnet
