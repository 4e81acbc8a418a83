#include "fwnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace fwnet {

// -- config ------------------------------------------------------------------

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Win: return "win";
        case Variant::FwNet: return "fwnet";
        case Variant::FwNetSe: return "fwnet_se";
        case Variant::FwNetEca: return "fwnet_eca";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "win") return Variant::Win;
    if (s == "fwnet") return Variant::FwNet;
    if (s == "fwnet_se" || s == "se") return Variant::FwNetSe;
    if (s == "fwnet_eca" || s == "eca") return Variant::FwNetEca;
    throw ConfigError("unknown variant '" + s + "' (expected win, fwnet, fwnet_se or fwnet_eca)");
}

ModelConfig ModelConfig::preset(char size) {
    ModelConfig c;
    switch (size) {
        case 't': case 'T': c.depths = {2, 2, 6, 2}; break;
        case 's': case 'S': c.depths = {2, 2, 12, 2}; break;
        case 'b': case 'B': c.depths = {2, 2, 18, 2}; break;
        default: throw ConfigError(std::string("unknown model size '") + size + "' (expected t, s or b)");
    }
    return c;
}

ModelConfig ModelConfig::mini() {
    ModelConfig c;
    c.patch = 4;
    c.embed_dim = 32;
    c.depths = {2, 2};
    c.window = 7;
    c.num_classes = 4;
    c.image_size = 56;
    return c;
}

std::size_t ModelConfig::stage_heads(std::size_t s) const {
    if (!heads.empty()) return heads.at(s);
    return std::max<std::size_t>(1, stage_dim(s) / 32);
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
    if (patch == 0 || in_chans == 0 || embed_dim == 0 || window == 0 || ffn_ratio == 0 || num_classes == 0)
        fail("patch, in_chans, embed_dim, window, ffn_ratio and num_classes must be positive");
    if (depths.empty()) fail("at least one stage is required");
    if (image_size == 0 || image_size % patch != 0)
        fail("image size " + std::to_string(image_size) + " not divisible by patch " + std::to_string(patch));
    if (!heads.empty() && heads.size() != depths.size()) fail("heads must list one entry per stage");
    const std::size_t tokens = image_size / patch;
    for (std::size_t s = 0; s < depths.size(); ++s) {
        if (depths[s] == 0 || depths[s] % 2 != 0)
            fail("stage " + std::to_string(s) + " depth " + std::to_string(depths[s]) + " must be positive and even");
        if (s > 0 && (tokens >> (s - 1)) % 2 != 0)
            fail("stage " + std::to_string(s - 1) + " resolution is odd and cannot be merged");
        const std::size_t r = stage_resolution(s);
        if (r == 0 || r % window != 0)
            fail("stage " + std::to_string(s) + " resolution " + std::to_string(r) +
                 " not divisible by window " + std::to_string(window));
        const std::size_t h = stage_heads(s);
        if (h == 0 || stage_dim(s) % h != 0)
            fail("stage " + std::to_string(s) + " dim " + std::to_string(stage_dim(s)) +
                 " not divisible by heads " + std::to_string(h));
        if (variant == Variant::FwNetSe && (se_reduction == 0 || stage_dim(s) % se_reduction != 0))
            fail("stage " + std::to_string(s) + " dim not divisible by SE reduction");
    }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list '" + s + "'");
        }
    }
    return out;
}

}  // namespace

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "patch=" << patch << '\n'
       << "in_chans=" << in_chans << '\n'
       << "embed_dim=" << embed_dim << '\n'
       << "depths=" << join(depths) << '\n'
       << "window=" << window << '\n'
       << "heads=" << join(heads) << '\n'
       << "ffn_ratio=" << ffn_ratio << '\n'
       << "num_classes=" << num_classes << '\n'
       << "variant=" << to_string(variant) << '\n'
       << "image_size=" << image_size << '\n'
       << "se_reduction=" << se_reduction << '\n';
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        auto num = [&] {
            try {
                return static_cast<std::size_t>(std::stoul(value));
            } catch (const std::exception&) {
                throw ConfigError("config key " + key + " has non-integer value '" + value + "'");
            }
        };
        if (key == "patch") c.patch = num();
        else if (key == "in_chans") c.in_chans = num();
        else if (key == "embed_dim") c.embed_dim = num();
        else if (key == "depths") c.depths = split_sizes(value);
        else if (key == "window") c.window = num();
        else if (key == "heads") c.heads = split_sizes(value);
        else if (key == "ffn_ratio") c.ffn_ratio = num();
        else if (key == "num_classes") c.num_classes = num();
        else if (key == "variant") c.variant = parse_variant(value);
        else if (key == "image_size") c.image_size = num();
        else if (key == "se_reduction") c.se_reduction = num();
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

// -- construction ----------------------------------------------------------------

LayerNormParams LayerNormParams::identity(std::size_t c) {
    return {RealTensor({c}, 1.0), RealTensor({c})};
}

FfnParams FfnParams::zeros(std::size_t c, std::size_t ratio) {
    return {RealTensor({c, ratio * c}), RealTensor({ratio * c}), RealTensor({ratio * c, c}), RealTensor({c})};
}

namespace {

LayerNormParams zero_norm(std::size_t c) { return {RealTensor({c}), RealTensor({c})}; }

}  // namespace

FwNetModel zeros_like(const ModelConfig& config) {
    config.validate();
    FwNetModel m;
    m.config = config;
    const std::size_t c0 = config.embed_dim;
    m.embed.w = RealTensor({config.patch * config.patch * config.in_chans, c0});
    m.embed.b = RealTensor({c0});
    m.embed.norm = zero_norm(c0);
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
        const std::size_t c = config.stage_dim(s);
        const std::size_t r = config.stage_resolution(s);
        Stage stage;
        for (std::size_t j = 0; j < config.depths[s]; ++j) {
            if (j % 2 == 0) {
                stage.blocks.emplace_back(AttnBlock{zero_norm(c),
                                                    AttentionParams::zeros(c, config.stage_heads(s), config.window),
                                                    zero_norm(c), FfnParams::zeros(c, config.ffn_ratio)});
            } else {
                FilterBlock fb;
                if (config.variant != Variant::Win) {
                    fb.norm1 = zero_norm(c);
                    fb.filter = FilterWeights::constant(r, r, c, Complex{0.0, 0.0});
                }
                if (config.variant == Variant::FwNetEca) fb.eca = EcaParams{};
                if (config.variant == Variant::FwNetSe) fb.se = SeParams::zeros(c, config.se_reduction);
                fb.norm2 = zero_norm(c);
                fb.ffn = FfnParams::zeros(c, config.ffn_ratio);
                stage.blocks.emplace_back(std::move(fb));
            }
        }
        if (s + 1 < config.num_stages()) stage.merge = PatchMergeParams{zero_norm(4 * c), RealTensor({4 * c, 2 * c})};
        m.stages.push_back(std::move(stage));
    }
    const std::size_t cf = config.final_dim();
    m.head = HeadParams{zero_norm(cf), RealTensor({cf, config.num_classes}), RealTensor({config.num_classes})};
    return m;
}

FwNetModel zeros_like(const FwNetModel& model) { return zeros_like(model.config); }

// -- parameter traversal -------------------------------------------------------

namespace {

enum class Kind { Weight, Bias, NormScale, NormShift, Filter, Kernel, BiasTable };

// Calls f(name, tensor, kind) for every learnable tensor. Works for const and
// non-const models.
template <typename M, typename F>
void visit_params(M& m, F&& f) {
    auto norm = [&](const std::string& prefix, auto& ln) {
        f(prefix + ".weight", ln.gamma, Kind::NormScale);
        f(prefix + ".bias", ln.beta, Kind::NormShift);
    };
    auto ffn = [&](const std::string& prefix, auto& p) {
        f(prefix + ".fc1.weight", p.w1, Kind::Weight);
        f(prefix + ".fc1.bias", p.b1, Kind::Bias);
        f(prefix + ".fc2.weight", p.w2, Kind::Weight);
        f(prefix + ".fc2.bias", p.b2, Kind::Bias);
    };
    f(std::string("embed.proj.weight"), m.embed.w, Kind::Weight);
    f(std::string("embed.proj.bias"), m.embed.b, Kind::Bias);
    norm("embed.norm", m.embed.norm);
    for (std::size_t s = 0; s < m.stages.size(); ++s) {
        auto& stage = m.stages[s];
        for (std::size_t j = 0; j < stage.blocks.size(); ++j) {
            const std::string prefix = "stages." + std::to_string(s) + ".blocks." + std::to_string(j);
            std::visit(
                [&](auto& blk) {
                    using B = std::decay_t<decltype(blk)>;
                    if constexpr (std::is_same_v<B, AttnBlock>) {
                        norm(prefix + ".norm1", blk.norm1);
                        f(prefix + ".attn.qkv.weight", blk.attn.w_qkv, Kind::Weight);
                        f(prefix + ".attn.qkv.bias", blk.attn.b_qkv, Kind::Bias);
                        f(prefix + ".attn.proj.weight", blk.attn.w_out, Kind::Weight);
                        f(prefix + ".attn.proj.bias", blk.attn.b_out, Kind::Bias);
                        f(prefix + ".attn.relative_position_bias_table", blk.attn.bias_table, Kind::BiasTable);
                        norm(prefix + ".norm2", blk.norm2);
                        ffn(prefix + ".ffn", blk.ffn);
                    } else {
                        if (blk.norm1) norm(prefix + ".norm1", *blk.norm1);
                        if (blk.filter) f(prefix + ".filter.complex_weight", blk.filter->data, Kind::Filter);
                        if (blk.eca) f(prefix + ".eca.kernel", blk.eca->kernel, Kind::Kernel);
                        if (blk.se) {
                            f(prefix + ".se.fc1.weight", blk.se->w1, Kind::Weight);
                            f(prefix + ".se.fc1.bias", blk.se->b1, Kind::Bias);
                            f(prefix + ".se.fc2.weight", blk.se->w2, Kind::Weight);
                            f(prefix + ".se.fc2.bias", blk.se->b2, Kind::Bias);
                        }
                        norm(prefix + ".norm2", blk.norm2);
                        ffn(prefix + ".ffn", blk.ffn);
                    }
                },
                stage.blocks[j]);
        }
        if (stage.merge) {
            const std::string prefix = "stages." + std::to_string(s) + ".merge";
            norm(prefix + ".norm", stage.merge->norm);
            f(prefix + ".reduction.weight", stage.merge->w, Kind::Weight);
        }
    }
    norm("head.norm", m.head.norm);
    f(std::string("head.fc.weight"), m.head.w, Kind::Weight);
    f(std::string("head.fc.bias"), m.head.b, Kind::Bias);
}

template <typename Ref, typename M>
std::vector<Ref> collect(M& m) {
    std::vector<Ref> out;
    visit_params(m, [&](const std::string& name, auto& t, Kind kind) {
        using T = typename std::decay_t<decltype(t)>::value_type;
        Shape shape = t.shape();
        const bool decay = kind == Kind::Weight;
        if constexpr (std::is_same_v<T, Complex>) {
            shape.push_back(2);
            using D = std::conditional_t<std::is_const_v<M>, const double, double>;
            auto* p = reinterpret_cast<D*>(t.raw());
            out.push_back(Ref{name, shape, {p, t.size() * 2}, decay});
        } else {
            out.push_back(Ref{name, shape, t.data(), decay});
        }
    });
    return out;
}

}  // namespace

std::vector<ParamRef> parameters(FwNetModel& model) { return collect<ParamRef>(model); }
std::vector<ConstParamRef> parameters(const FwNetModel& model) { return collect<ConstParamRef>(model); }

std::size_t parameter_count(const FwNetModel& model) {
    std::size_t n = 0;
    for (const auto& p : parameters(model)) n += p.values.size();
    return n;
}

FwNetModel init_params(const ModelConfig& config, std::uint64_t seed) {
    FwNetModel m = zeros_like(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    constexpr double kStd = 0.02;
    auto trunc_normal = [&] {
        for (;;) {
            const double z = normal(rng);
            if (std::abs(z) <= 2.0) return z * kStd;
        }
    };
    visit_params(m, [&](const std::string&, auto& t, Kind kind) {
        using T = typename std::decay_t<decltype(t)>::value_type;
        if constexpr (std::is_same_v<T, Complex>) {
            for (auto& v : t.data()) {
                const double re = normal(rng) * kStd;
                const double im = normal(rng) * kStd;
                v = Complex(1.0 + re, im);
            }
        } else {
            switch (kind) {
                case Kind::Weight:
                case Kind::Kernel:
                case Kind::BiasTable:
                    for (auto& v : t.data()) v = trunc_normal();
                    break;
                case Kind::NormScale: t.fill(1.0); break;
                default: t.fill(0.0); break;
            }
        }
    });
    return m;
}

// -- layers --------------------------------------------------------------------

RealTensor ffn_forward(const RealTensor& x, const FfnParams& p, FfnCache* cache) {
    RealTensor hidden = linear(x, p.w1, p.b1);
    RealTensor act = gelu(hidden);
    RealTensor y = linear(act, p.w2, p.b2);
    if (cache) *cache = FfnCache{x, std::move(hidden), std::move(act)};
    return y;
}

RealTensor ffn_backward(const FfnParams& p, const FfnCache& cache, const RealTensor& grad_y, FfnParams& grads) {
    RealTensor d_act = linear_backward_accumulate(cache.act, p.w2, grad_y, grads.w2, &grads.b2);
    RealTensor d_hidden = gelu_backward(cache.hidden, d_act);
    return linear_backward_accumulate(cache.input, p.w1, d_hidden, grads.w1, &grads.b1);
}

FeatureMap patch_embed(const RealTensor& image, const PatchEmbedParams& p, std::size_t patch,
                       PatchEmbedCache* cache) {
    if (image.rank() != 4) throw ShapeError("patch_embed: expected [B,H,W,C] image, got " + shape_to_string(image.shape()));
    const std::size_t b = image.dim(0), h = image.dim(1), w = image.dim(2), ch = image.dim(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ArgumentError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch " + std::to_string(patch));
    }
    if (p.w.rank() != 2 || p.w.dim(0) != patch * patch * ch) {
        throw ShapeError("patch_embed: weight " + shape_to_string(p.w.shape()) + " incompatible with image " +
                         shape_to_string(image.shape()));
    }
    const std::size_t gh = h / patch, gw = w / patch, k = patch * patch * ch;
    RealTensor patches({b, gh, gw, k});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < gh; ++i)
            for (std::size_t j = 0; j < gw; ++j) {
                double* dst = patches.raw() + ((n * gh + i) * gw + j) * k;
                for (std::size_t py = 0; py < patch; ++py) {
                    const double* src = image.raw() + ((n * h + i * patch + py) * w + j * patch) * ch;
                    std::copy(src, src + patch * ch, dst + py * patch * ch);
                }
            }
    RealTensor tokens = linear(patches, p.w, p.b);
    FeatureMap out = layer_norm(tokens, p.norm.gamma, p.norm.beta, kLayerNormEps, cache ? &cache->norm : nullptr);
    if (cache) cache->patches = std::move(patches);
    return out;
}

RealTensor patch_embed_backward(const PatchEmbedParams& p, std::size_t patch, const Shape& image_shape,
                                const PatchEmbedCache& cache, const FeatureMap& grad_y, PatchEmbedParams& grads) {
    RealTensor g_tokens = layer_norm_backward(cache.norm, p.norm.gamma, grad_y, grads.norm.gamma, grads.norm.beta);
    RealTensor g_patches = linear_backward_accumulate(cache.patches, p.w, g_tokens, grads.w, &grads.b);
    const std::size_t b = image_shape[0], h = image_shape[1], w = image_shape[2], ch = image_shape[3];
    const std::size_t gh = h / patch, gw = w / patch, k = patch * patch * ch;
    RealTensor g_image(image_shape);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < gh; ++i)
            for (std::size_t j = 0; j < gw; ++j) {
                const double* src = g_patches.raw() + ((n * gh + i) * gw + j) * k;
                for (std::size_t py = 0; py < patch; ++py) {
                    double* dst = g_image.raw() + ((n * h + i * patch + py) * w + j * patch) * ch;
                    std::copy(src + py * patch * ch, src + (py + 1) * patch * ch, dst);
                }
            }
    return g_image;
}

namespace {

// Neighbour q of a 2×2 cell sits at (row, col) offset (q & 1, q >> 1).
template <typename F>
void for_each_merge_slot(const Shape& s, F&& f) {
    const std::size_t b = s[0], h = s[1], w = s[2], c = s[3];
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t q = 0; q < 4; ++q) {
                    const std::size_t r = 2 * i + (q & 1), col = 2 * j + (q >> 1);
                    f(((n * oh + i) * ow + j) * 4 * c + q * c, ((n * h + r) * w + col) * c, c);
                }
}

}  // namespace

FeatureMap patch_merge(const FeatureMap& x, const PatchMergeParams& p, PatchMergeCache* cache) {
    if (x.rank() != 4) throw ShapeError("patch_merge: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ArgumentError("patch_merge: resolution " + std::to_string(h) + "x" + std::to_string(w) + " is not even");
    }
    if (p.w.shape() != Shape{4 * c, 2 * c}) {
        throw ShapeError("patch_merge: weight " + shape_to_string(p.w.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
    }
    RealTensor gathered({b, h / 2, w / 2, 4 * c});
    for_each_merge_slot(x.shape(), [&](std::size_t dst, std::size_t src, std::size_t n) {
        std::copy(x.raw() + src, x.raw() + src + n, gathered.raw() + dst);
    });
    LayerNormCache* ln = cache ? &cache->norm : nullptr;
    RealTensor normed = layer_norm(gathered, p.norm.gamma, p.norm.beta, kLayerNormEps, ln);
    FeatureMap out = linear(normed, p.w, RealTensor{});
    if (cache) {
        cache->gathered = std::move(gathered);
        cache->normed = std::move(normed);
    }
    return out;
}

FeatureMap patch_merge_backward(const PatchMergeParams& p, const Shape& input_shape, const PatchMergeCache& cache,
                                const FeatureMap& grad_y, PatchMergeParams& grads) {
    RealTensor g_normed = linear_backward_accumulate(cache.normed, p.w, grad_y, grads.w, nullptr);
    RealTensor g_gathered = layer_norm_backward(cache.norm, p.norm.gamma, g_normed, grads.norm.gamma, grads.norm.beta);
    FeatureMap gx(input_shape);
    for_each_merge_slot(input_shape, [&](std::size_t src, std::size_t dst, std::size_t n) {
        std::copy(g_gathered.raw() + src, g_gathered.raw() + src + n, gx.raw() + dst);
    });
    return gx;
}

FeatureMap attn_block_forward(const FeatureMap& x, const AttnBlock& p, AttnBlockCache* cache) {
    if (x.rank() != 4) throw ShapeError("attn_block: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t h = x.dim(1), w = x.dim(2);
    RealTensor normed = layer_norm(x, p.norm1.gamma, p.norm1.beta, kLayerNormEps, cache ? &cache->norm1 : nullptr);
    WindowGrid grid = window_partition(normed, p.attn.window());
    WindowGrid attended = wmsa_forward(grid, p.attn, cache ? &cache->attn : nullptr);
    FeatureMap xh = add(x, window_reverse(attended, h, w));
    RealTensor n2 = layer_norm(xh, p.norm2.gamma, p.norm2.beta, kLayerNormEps, cache ? &cache->norm2 : nullptr);
    FeatureMap out = add(xh, ffn_forward(n2, p.ffn, cache ? &cache->ffn : nullptr));
    if (cache) {
        cache->rows = grid.rows;
        cache->cols = grid.cols;
    }
    return out;
}

FeatureMap attn_block_backward(const AttnBlock& p, const AttnBlockCache& cache, const FeatureMap& grad_y,
                               AttnBlock& grads) {
    const std::size_t h = grad_y.dim(1), w = grad_y.dim(2);
    RealTensor g_n2 = ffn_backward(p.ffn, cache.ffn, grad_y, grads.ffn);
    FeatureMap g_xh = add(grad_y, layer_norm_backward(cache.norm2, p.norm2.gamma, g_n2, grads.norm2.gamma,
                                                      grads.norm2.beta));
    WindowGrid g_att = window_partition(g_xh, p.attn.window());
    RealTensor g_win = wmsa_backward_accumulate(p.attn, cache.attn, g_att.windows, grads.attn);
    FeatureMap g_normed = window_reverse(WindowGrid{std::move(g_win), cache.rows, cache.cols, p.attn.window()}, h, w);
    return add(g_xh, layer_norm_backward(cache.norm1, p.norm1.gamma, g_normed, grads.norm1.gamma, grads.norm1.beta));
}

FeatureMap filter_block_forward(const FeatureMap& x, const FilterBlock& p, FilterBlockCache* cache) {
    if (x.rank() != 4) throw ShapeError("filter_block: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    FeatureMap xh = x;
    if (p.filter) {
        if (!p.norm1) throw ShapeError("filter_block: filter present without its layer norm");
        FeatureMap normed = layer_norm(x, p.norm1->gamma, p.norm1->beta, kLayerNormEps, cache ? &cache->norm1 : nullptr);
        FeatureMap filtered = filter_enhance_forward(normed, *p.filter, cache ? &cache->fe : nullptr);
        FeatureMap gated = p.eca  ? eca_forward(filtered, *p.eca, cache ? &cache->eca : nullptr)
                           : p.se ? se_forward(filtered, *p.se, cache ? &cache->se : nullptr)
                                  : filtered;
        add_inplace(xh, gated);
        if (cache) {
            cache->normed = std::move(normed);
            cache->filtered = std::move(filtered);
        }
    }
    RealTensor n2 = layer_norm(xh, p.norm2.gamma, p.norm2.beta, kLayerNormEps, cache ? &cache->norm2 : nullptr);
    add_inplace(xh, ffn_forward(n2, p.ffn, cache ? &cache->ffn : nullptr));
    return xh;
}

FeatureMap filter_block_backward(const FilterBlock& p, const FilterBlockCache& cache, const FeatureMap& grad_y,
                                 FilterBlock& grads) {
    RealTensor g_n2 = ffn_backward(p.ffn, cache.ffn, grad_y, grads.ffn);
    FeatureMap g_xh = add(grad_y, layer_norm_backward(cache.norm2, p.norm2.gamma, g_n2, grads.norm2.gamma,
                                                      grads.norm2.beta));
    if (!p.filter) return g_xh;
    FeatureMap g_filtered = p.eca  ? eca_backward_accumulate(cache.filtered, *p.eca, cache.eca, g_xh, *grads.eca)
                            : p.se ? se_backward_accumulate(cache.filtered, *p.se, cache.se, g_xh, *grads.se)
                                   : g_xh;
    FilterGrads fg = filter_enhance_backward(cache.normed, *p.filter, g_filtered, &cache.fe);
    for (std::size_t i = 0; i < fg.w.size(); ++i) grads.filter->data[i] += fg.w[i];
    add_inplace(g_xh, layer_norm_backward(cache.norm1, p.norm1->gamma, fg.x, grads.norm1->gamma, grads.norm1->beta));
    return g_xh;
}

RealTensor head_forward(const FeatureMap& x, const HeadParams& p, HeadCache* cache) {
    FeatureMap normed = layer_norm(x, p.norm.gamma, p.norm.beta, kLayerNormEps, cache ? &cache->norm : nullptr);
    RealTensor pooled = global_avg_pool(normed);
    RealTensor logits = linear(pooled, p.w, p.b);
    if (cache) {
        cache->token_shape = x.shape();
        cache->pooled = std::move(pooled);
    }
    return logits;
}

FeatureMap head_backward(const HeadParams& p, const HeadCache& cache, const RealTensor& grad_logits,
                         HeadParams& grads) {
    RealTensor g_pooled = linear_backward_accumulate(cache.pooled, p.w, grad_logits, grads.w, &grads.b);
    FeatureMap g_normed = global_avg_pool_backward(cache.token_shape, g_pooled);
    return layer_norm_backward(cache.norm, p.norm.gamma, g_normed, grads.norm.gamma, grads.norm.beta);
}

// -- model -----------------------------------------------------------------------

RealTensor model_forward(const RealTensor& image, const FwNetModel& model, ForwardTrace* trace) {
    const ModelConfig& cfg = model.config;
    if (image.rank() != 4 || image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size ||
        image.dim(3) != cfg.in_chans) {
        throw ShapeError("model_forward: image " + shape_to_string(image.shape()) + " does not match config ([B," +
                         std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.in_chans) + "])");
    }
    if (trace) {
        *trace = ForwardTrace{};
        trace->image_shape = image.shape();
        trace->blocks.resize(model.stages.size());
        trace->block_outputs.resize(model.stages.size());
        trace->merges.resize(model.stages.size());
        trace->merge_inputs.resize(model.stages.size());
    }
    FeatureMap x = patch_embed(image, model.embed, cfg.patch, trace ? &trace->embed : nullptr);
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
        const Stage& stage = model.stages[s];
        for (const Block& block : stage.blocks) {
            if (const auto* ab = std::get_if<AttnBlock>(&block)) {
                if (trace) {
                    AttnBlockCache c;
                    x = attn_block_forward(x, *ab, &c);
                    trace->blocks[s].emplace_back(std::move(c));
                } else {
                    x = attn_block_forward(x, *ab);
                }
            } else {
                const auto& fb = std::get<FilterBlock>(block);
                if (trace) {
                    FilterBlockCache c;
                    x = filter_block_forward(x, fb, &c);
                    trace->blocks[s].emplace_back(std::move(c));
                } else {
                    x = filter_block_forward(x, fb);
                }
            }
            if (trace) trace->block_outputs[s].push_back(x);
        }
        if (stage.merge) {
            if (trace) {
                trace->merge_inputs[s] = x.shape();
                PatchMergeCache c;
                x = patch_merge(x, *stage.merge, &c);
                trace->merges[s] = std::move(c);
            } else {
                x = patch_merge(x, *stage.merge);
            }
        }
    }
    RealTensor logits = head_forward(x, model.head, trace ? &trace->head : nullptr);
    if (trace) trace->logits = logits;
    return logits;
}

void model_backward_from_logits(const FwNetModel& model, const ForwardTrace& trace, const RealTensor& grad_logits,
                                FwNetModel& grads, BlockOutputGrads* block_grads) {
    if (grad_logits.shape() != trace.logits.shape()) {
        throw ShapeError("model_backward: logits gradient " + shape_to_string(grad_logits.shape()) +
                         " does not match logits " + shape_to_string(trace.logits.shape()));
    }
    if (block_grads) {
        block_grads->assign(model.stages.size(), {});
        for (std::size_t s = 0; s < model.stages.size(); ++s) block_grads->at(s).resize(model.stages[s].blocks.size());
    }
    FeatureMap g = head_backward(model.head, trace.head, grad_logits, grads.head);
    for (std::size_t s = model.stages.size(); s-- > 0;) {
        const Stage& stage = model.stages[s];
        if (stage.merge) g = patch_merge_backward(*stage.merge, trace.merge_inputs[s], *trace.merges[s], g, *grads.stages[s].merge);
        for (std::size_t j = stage.blocks.size(); j-- > 0;) {
            if (block_grads) (*block_grads)[s][j] = g;
            const BlockCache& cache = trace.blocks[s][j];
            if (const auto* ab = std::get_if<AttnBlock>(&stage.blocks[j])) {
                g = attn_block_backward(*ab, std::get<AttnBlockCache>(cache), g,
                                        std::get<AttnBlock>(grads.stages[s].blocks[j]));
            } else {
                g = filter_block_backward(std::get<FilterBlock>(stage.blocks[j]), std::get<FilterBlockCache>(cache), g,
                                          std::get<FilterBlock>(grads.stages[s].blocks[j]));
            }
        }
    }
    patch_embed_backward(model.embed, model.config.patch, trace.image_shape, trace.embed, g, grads.embed);
}

double cross_entropy(const RealTensor& logits, const std::vector<std::size_t>& labels, RealTensor* grad_logits) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    for (std::size_t label : labels) {
        if (label >= k) {
            throw ArgumentError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
        }
    }
    RealTensor probs = softmax_lastaxis(logits);
    double loss = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        const double* row = logits.raw() + n * k;
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        loss += (mx + std::log(sum)) - row[labels[n]];
    }
    if (grad_logits) {
        *grad_logits = probs;
        for (std::size_t n = 0; n < b; ++n) (*grad_logits)[n * k + labels[n]] -= 1.0;
        for (auto& v : grad_logits->data()) v /= static_cast<double>(b);
    }
    return loss / static_cast<double>(b);
}

LossAndGrads model_backward(const RealTensor& image, const std::vector<std::size_t>& labels, const FwNetModel& model) {
    ForwardTrace trace;
    RealTensor logits = model_forward(image, model, &trace);
    RealTensor g_logits;
    LossAndGrads out;
    out.loss = cross_entropy(logits, labels, &g_logits);
    out.grads = zeros_like(model);
    model_backward_from_logits(model, trace, g_logits, out.grads);
    out.logits = std::move(logits);
    return out;
}

// -- optimiser -------------------------------------------------------------------

void adamw_update(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, AdamState& state,
                  const AdamWOptions& opt) {
    if (params.size() != grads.size()) {
        throw ShapeError("adamw: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.values.size(), 0.0);
            state.v.emplace_back(p.values.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].values.size() != grads[i].values.size() || state.m[i].size() != params[i].values.size()) {
            throw ShapeError("adamw: shape mismatch for " + params[i].name + " " + shape_to_string(params[i].shape) +
                             " vs gradient " + shape_to_string(grads[i].shape));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values;
        auto g = grads[i].values;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const double decay = params[i].decay ? opt.lr * opt.weight_decay : 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] -= decay * p[k];
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

void adamw_step(FwNetModel& model, const FwNetModel& grads, AdamState& state, const AdamWOptions& opt) {
    const auto p = parameters(model);
    const auto g = parameters(grads);
    adamw_update(p, g, state, opt);
}

}  // namespace fwnet
