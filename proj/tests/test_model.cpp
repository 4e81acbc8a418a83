#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fwnet/accounting.hpp"
#include "fwnet/model.hpp"
#include "oracles.hpp"

using namespace fwnet;

namespace {

ModelConfig tiny_config(Variant v = Variant::FwNetEca) {
    ModelConfig cfg;
    cfg.patch = 2;
    cfg.embed_dim = 8;
    cfg.depths = {2, 2};
    cfg.window = 2;
    cfg.num_classes = 3;
    cfg.image_size = 8;
    cfg.variant = v;
    cfg.se_reduction = 2;
    return cfg;
}

FilterBlock& filter_block(FwNetModel& m, std::size_t s = 0) { return std::get<FilterBlock>(m.stages[s].blocks[1]); }

}  // namespace

TEST_SUITE("model") {

TEST_CASE("presets and stage geometry") {
    const ModelConfig t = ModelConfig::preset('t');
    CHECK(t.depths == std::vector<std::size_t>{2, 2, 6, 2});
    CHECK(ModelConfig::preset('s').depths[2] == 12);
    CHECK(ModelConfig::preset('b').depths[2] == 18);
    CHECK_THROWS_AS(ModelConfig::preset('x'), ConfigError);
    const std::size_t res[] = {56, 28, 14, 7};
    const std::size_t dims[] = {96, 192, 384, 768};
    for (std::size_t s = 0; s < 4; ++s) {
        CHECK(t.stage_resolution(s) == res[s]);
        CHECK(t.stage_dim(s) == dims[s]);
    }
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("blocks alternate attention and filter") {
    const FwNetModel m = zeros_like(ModelConfig::preset('t'));
    const std::size_t expected_filters[] = {1, 1, 3, 1};
    for (std::size_t s = 0; s < 4; ++s) {
        std::size_t filters = 0;
        for (std::size_t j = 0; j < m.stages[s].blocks.size(); ++j) {
            const bool is_filter = std::holds_alternative<FilterBlock>(m.stages[s].blocks[j]);
            CHECK(is_filter == (j % 2 == 1));
            filters += is_filter;
        }
        CHECK(filters == expected_filters[s]);
        CHECK(m.stages[s].merge.has_value() == (s < 3));
    }
}

TEST_CASE("config validation and text round trip") {
    ModelConfig bad = ModelConfig::mini();
    bad.depths = {2, 3};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig::mini();
    bad.window = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig::mini();
    bad.image_size = 58;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(init_params(bad, 0), ConfigError);

    ModelConfig cfg = tiny_config(Variant::FwNetSe);
    cfg.heads = {2, 4};
    CHECK(ModelConfig::from_text(cfg.to_text()) == cfg);
    CHECK(ModelConfig::from_text(ModelConfig::mini().to_text()) == ModelConfig::mini());
    CHECK_THROWS_AS(ModelConfig::from_text("patch=x\n"), ConfigError);
    CHECK(parse_variant("win") == Variant::Win);
    CHECK(parse_variant("fwnet_eca") == Variant::FwNetEca);
    CHECK_THROWS_AS(parse_variant("swin"), ArgumentError);
}

TEST_CASE("closed-form parameter counts equal instantiated totals") {
    for (char size : {'t', 's', 'b'})
        for (Variant v : {Variant::Win, Variant::FwNet, Variant::FwNetSe, Variant::FwNetEca}) {
            ModelConfig cfg = ModelConfig::preset(size);
            cfg.variant = v;
            CAPTURE(size);
            CHECK(count_params(cfg).total_params == parameter_count(zeros_like(cfg)));
        }
    CHECK(count_params(ModelConfig::mini()).total_params == parameter_count(init_params(ModelConfig::mini(), 1)));
}

TEST_CASE("parameter names are unique and complex tensors carry a trailing 2") {
    const FwNetModel m = zeros_like(tiny_config());
    std::set<std::string> names;
    bool saw_filter = false;
    for (const auto& p : parameters(m)) {
        CHECK(names.insert(p.name).second);
        CHECK(shape_numel(p.shape) == p.values.size());
        if (p.name.find("complex_weight") != std::string::npos) {
            saw_filter = true;
            CHECK(p.shape.back() == 2);
        }
    }
    CHECK(saw_filter);
}

TEST_CASE("patch embedding") {
    const ModelConfig cfg = ModelConfig::preset('t');
    FwNetModel m = zeros_like(cfg);
    m.embed.norm = LayerNormParams::identity(96);
    CHECK(m.embed.w.size() + m.embed.b.size() == 48 * 96 + 96);
    CHECK(m.embed.norm.gamma.size() + m.embed.norm.beta.size() == 192);
    const FeatureMap y = patch_embed(RealTensor({1, 224, 224, 3}), m.embed, 4);
    CHECK(y.shape() == Shape{1, 56, 56, 96});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("patch embedding flattens patches row-major then channel") {
    std::mt19937_64 rng(1);
    PatchEmbedParams p{oracle::random_tensor({2 * 2 * 3, 4}, rng), oracle::random_tensor({4}, rng),
                       LayerNormParams::identity(4)};
    const RealTensor img = oracle::random_tensor({1, 4, 4, 3}, rng);
    PatchEmbedCache cache;
    patch_embed(img, p, 2, &cache);
    // patch (1,0) covers rows 2..3, cols 0..1
    for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(cache.patches.at(0, 1, 0, (dy * 2 + dx) * 3 + c) == img.at(0, 2 + dy, dx, c));
}

TEST_CASE("patch merging") {
    std::mt19937_64 rng(2);
    PatchMergeParams p{LayerNormParams::identity(4 * 96), oracle::random_tensor({4 * 96, 2 * 96}, rng, 0.02)};
    CHECK(p.w.size() + 2 * p.norm.gamma.size() == 4 * 96 * 2 * 96 + 2 * 4 * 96);
    const FeatureMap y = patch_merge(oracle::random_tensor({1, 56, 56, 96}, rng), p);
    CHECK(y.shape() == Shape{1, 28, 28, 192});

    PatchMergeParams q{LayerNormParams::identity(8), oracle::random_tensor({8, 4}, rng)};
    q.norm.beta = oracle::random_tensor({8}, rng);
    const FeatureMap c = patch_merge(RealTensor({1, 4, 4, 2}, 3.0), q);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - c[i % 4]) < 1e-14);

    // concatenation order (0,0), (1,0), (0,1), (1,1)
    PatchMergeCache cache;
    const RealTensor x = oracle::random_tensor({1, 2, 2, 2}, rng);
    patch_merge(x, q, &cache);
    const std::size_t order[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t k = 0; k < 2; ++k) CHECK(cache.gathered[s * 2 + k] == x.at(0, order[s][0], order[s][1], k));
    CHECK_THROWS_AS(patch_merge(RealTensor({1, 3, 4, 2}), q), ArgumentError);
}

TEST_CASE("zero-weight attention block is the identity") {
    FwNetModel m = zeros_like(tiny_config());
    const AttnBlock& blk = std::get<AttnBlock>(m.stages[0].blocks[0]);
    std::mt19937_64 rng(3);
    const RealTensor x = oracle::random_tensor({2, 4, 4, 8}, rng);
    const FeatureMap y = attn_block_forward(x, blk);
    CHECK(y.shape() == x.shape());
    CHECK(y == x);
}

TEST_CASE("filter block with unit filter, zero kernel and zero FFN") {
    FwNetModel m = zeros_like(tiny_config());
    FilterBlock& blk = filter_block(m);
    blk.norm1 = LayerNormParams::identity(8);
    blk.norm2 = LayerNormParams::identity(8);
    blk.filter = FilterWeights::constant(4, 4, 8, 1.0);
    std::mt19937_64 rng(4);
    const RealTensor x = oracle::random_tensor({1, 4, 4, 8}, rng);
    const FeatureMap y = filter_block_forward(x, blk);
    CHECK(y.shape() == x.shape());
    const RealTensor ln = layer_norm(x, RealTensor({8}, 1.0), RealTensor({8}, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - (x[i] + 0.5 * ln[i])) < 1e-10);
}

TEST_CASE("win variant drops the frequency path") {
    const FwNetModel m = zeros_like(tiny_config(Variant::Win));
    const FilterBlock& blk = std::get<FilterBlock>(m.stages[0].blocks[1]);
    CHECK_FALSE(blk.filter.has_value());
    CHECK_FALSE(blk.eca.has_value());
    CHECK_FALSE(blk.se.has_value());
    CHECK_FALSE(blk.norm1.has_value());
    const FwNetModel se = zeros_like(tiny_config(Variant::FwNetSe));
    CHECK(std::get<FilterBlock>(se.stages[0].blocks[1]).se.has_value());
    CHECK_FALSE(std::get<FilterBlock>(se.stages[0].blocks[1]).eca.has_value());
    CHECK(count_params(tiny_config(Variant::Win)).total_params < count_params(tiny_config()).total_params);

    // win filter block: x̂ = x, out = x̂ + FFN(LN(x̂))
    FwNetModel w = init_params(tiny_config(Variant::Win), 5);
    const FilterBlock& wb = std::get<FilterBlock>(w.stages[0].blocks[1]);
    std::mt19937_64 rng(5);
    const RealTensor x = oracle::random_tensor({1, 4, 4, 8}, rng);
    const RealTensor expect = add(x, ffn_forward(layer_norm(x, wb.norm2.gamma, wb.norm2.beta), wb.ffn));
    CHECK(max_abs_diff(filter_block_forward(x, wb), expect) < 1e-14);
}

TEST_CASE("filter block reaches every position, attention block stays in its window") {
    const FwNetModel m = init_params(tiny_config(), 6);
    std::mt19937_64 rng(6);
    RealTensor x = oracle::random_tensor({1, 4, 4, 8}, rng);
    const auto& ab = std::get<AttnBlock>(m.stages[0].blocks[0]);
    const auto& fb = std::get<FilterBlock>(m.stages[0].blocks[1]);
    const FeatureMap a0 = attn_block_forward(x, ab), f0 = filter_block_forward(x, fb);
    x.at(0, 0, 0, 3) += 0.5;
    const FeatureMap a1 = attn_block_forward(x, ab), f1 = filter_block_forward(x, fb);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double da = 0.0, df = 0.0;
            for (std::size_t c = 0; c < 8; ++c) {
                da = std::max(da, std::abs(a1.at(0, i, j, c) - a0.at(0, i, j, c)));
                df = std::max(df, std::abs(f1.at(0, i, j, c) - f0.at(0, i, j, c)));
            }
            CHECK(df > 0.0);
            if (i >= 2 || j >= 2) CHECK(da == 0.0);
        }
}

TEST_CASE("init is deterministic and near identity in the filter") {
    const ModelConfig cfg = ModelConfig::mini();
    const FwNetModel a = init_params(cfg, 42), b = init_params(cfg, 42), c = init_params(cfg, 43);
    const auto pa = parameters(a), pb = parameters(b), pc = parameters(c);
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()));
        differs |= !std::equal(pa[i].values.begin(), pa[i].values.end(), pc[i].values.begin());
        if (pa[i].name.ends_with("norm1.weight") || pa[i].name.ends_with("norm2.weight"))
            for (double v : pa[i].values) CHECK(v == 1.0);
        if (pa[i].name.ends_with(".bias") && pa[i].name.find("norm") == std::string::npos)
            for (double v : pa[i].values) CHECK(v == 0.0);
        if (pa[i].name.ends_with("fc1.weight"))
            for (double v : pa[i].values) CHECK(std::abs(v) <= 0.04);
    }
    CHECK(differs);

    // weights 1 + ε with ε ~ complex N(0, σ²): the output deviates from the input
    // by about σ·√2 in relative RMS
    const FilterBlock& fb = std::get<FilterBlock>(a.stages[0].blocks[1]);
    std::mt19937_64 rng(7);
    const RealTensor z = oracle::random_tensor({4, 14, 14, 32}, rng);
    const RealTensor y = filter_enhance_forward(z, *fb.filter);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        num += (y[i] - z[i]) * (y[i] - z[i]);
        den += z[i] * z[i];
    }
    const double rel = std::sqrt(num / den);
    CHECK(rel > 0.5 * 0.02);
    CHECK(rel < 3.0 * 0.02);
}

TEST_CASE("forward shapes and batch consistency") {
    const FwNetModel m = init_params(tiny_config(), 8);
    std::mt19937_64 rng(8);
    const RealTensor one = oracle::random_tensor({1, 8, 8, 3}, rng);
    RealTensor two({2, 8, 8, 3});
    std::copy(one.data().begin(), one.data().end(), two.data().begin());
    std::copy(one.data().begin(), one.data().end(), two.data().begin() + static_cast<std::ptrdiff_t>(one.size()));
    const RealTensor logits = model_forward(two, m);
    CHECK(logits.shape() == Shape{2, 3});
    for (std::size_t k = 0; k < 3; ++k) CHECK(logits.at(0, k) == logits.at(1, k));
    CHECK(model_forward(one, m) == model_forward(one, m));
    CHECK_THROWS(model_forward(RealTensor({1, 16, 16, 3}), m));
}

TEST_CASE("cross entropy") {
    RealTensor grad;
    const double loss = cross_entropy(RealTensor({2, 5}, 0.3), {1, 4}, &grad);
    CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    std::mt19937_64 rng(9);
    const RealTensor logits = oracle::random_tensor({3, 4}, rng);
    const std::vector<std::size_t> labels{0, 3, 2};
    cross_entropy(logits, labels, &grad);
    const RealTensor sm = softmax_lastaxis(logits);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t k = 0; k < 4; ++k)
            CHECK(grad.at(b, k) == doctest::Approx((sm.at(b, k) - (k == labels[b] ? 1.0 : 0.0)) / 3.0).epsilon(1e-13));
    CHECK_THROWS_AS(cross_entropy(logits, {0, 4, 1}), ArgumentError);
    CHECK_THROWS_AS(model_backward(RealTensor({1, 8, 8, 3}), {3}, init_params(tiny_config(), 1)), ArgumentError);
}

TEST_CASE("adamw closed forms") {
    std::vector<double> w{0.5};
    std::vector<double> g{0.2};
    std::vector<ParamRef> params{{"w", {1}, w, true}};
    std::vector<ConstParamRef> grads{{"w", {1}, g, true}};
    AdamState state;
    AdamWOptions opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.01;
    adamw_update(params, grads, state, opt);
    // m̂ = g, v̂ = g², step = lr·g/(|g|+eps); decay lr·wd·w applied to the old value
    const double expect = 0.5 - 0.1 * 0.01 * 0.5 - 0.1 * 0.2 / (0.2 + 1e-8);
    CHECK(w[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(state.step == 1);
    CHECK(state.m[0][0] == doctest::Approx((1 - opt.beta1) * 0.2).epsilon(1e-15));
    CHECK(state.v[0][0] == doctest::Approx((1 - opt.beta2) * 0.04).epsilon(1e-15));

    FwNetModel m = init_params(tiny_config(), 3);
    const FwNetModel before = m;
    AdamState s2;
    AdamWOptions no_decay;
    no_decay.weight_decay = 0.0;
    adamw_step(m, zeros_like(m), s2, no_decay);
    const auto pa = parameters(std::as_const(m)), pb = parameters(before);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()));

    FwNetModel other = zeros_like(tiny_config(Variant::Win));
    CHECK_THROWS_AS(adamw_step(m, other, s2, no_decay), ShapeError);
}

}
