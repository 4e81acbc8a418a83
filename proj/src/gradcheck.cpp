#include "fwnet/gradcheck.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <utility>

#include "fwnet/attention.hpp"
#include "fwnet/channels.hpp"
#include "fwnet/model.hpp"
#include "fwnet/spectral.hpp"

namespace fwnet {

std::vector<std::vector<double>> finite_diff_scalar(const std::function<double()>& f,
                                                    std::span<const std::span<double>> params, double eps) {
    if (!(eps > 0.0)) throw ArgumentError("finite_diff_scalar: eps must be positive");
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
        std::span<double> p = params[t];
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double plus = f();
            p[i] = orig - eps;
            const double minus = f();
            p[i] = orig;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw EvaluationError("finite_diff_scalar: non-finite function value at tensor " + std::to_string(t) +
                                      ", coordinate " + std::to_string(i));
            }
            g[i] = (plus - minus) / (2.0 * eps);
        }
        out.push_back(std::move(g));
    }
    return out;
}

GradRow compare_gradients(std::string name, std::span<const double> analytic, std::span<const double> numeric,
                          double tol, double abs_floor) {
    if (analytic.size() != numeric.size()) {
        throw ShapeError("compare_gradients: " + name + " has " + std::to_string(analytic.size()) +
                         " analytic vs " + std::to_string(numeric.size()) + " numeric coordinates");
    }
    GradRow row;
    row.name = std::move(name);
    row.coordinates = analytic.size();
    row.tolerance = tol;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double abs_err = std::abs(a - n);
        const double rel = abs_err / std::max({std::abs(a), std::abs(n), 1e-8});
        row.max_rel_error = std::max(row.max_rel_error, rel);
        row.max_abs_error = std::max(row.max_abs_error, abs_err);
        if (!std::isfinite(a) || (rel > tol && abs_err > abs_floor)) row.passed = false;
    }
    return row;
}

bool GradReport::passed() const {
    for (const auto& r : rows)
        if (!r.passed) return false;
    return !rows.empty();
}

std::vector<std::string> GradReport::failures() const {
    std::vector<std::string> out;
    for (const auto& r : rows) {
        if (r.passed) continue;
        std::ostringstream os;
        os << r.name << ": max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error
           << " (abs " << r.max_abs_error << ") exceeds " << r.tolerance;
        out.push_back(os.str());
    }
    return out;
}

std::string GradReport::to_text() const {
    std::size_t width = 6;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "tensor" << "  " << std::right << std::setw(8) << "coords"
       << "  " << std::setw(11) << "max_rel" << "  " << std::setw(11) << "max_abs" << "  " << std::setw(9) << "tol"
       << "  result\n";
    os << std::scientific << std::setprecision(3);
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right << std::setw(8)
           << r.coordinates << "  " << std::setw(11) << r.max_rel_error << "  " << std::setw(11) << r.max_abs_error
           << "  " << std::setw(9) << std::setprecision(1) << r.tolerance << std::setprecision(3) << "  "
           << (r.passed ? "PASS" : "FAIL") << '\n';
    }
    return os.str();
}

std::string GradReport::to_csv() const {
    std::ostringstream os;
    os << "tensor,coordinates,max_rel_error,max_abs_error,tolerance,passed\n";
    os << std::setprecision(6);
    for (const auto& r : rows)
        os << r.name << ',' << r.coordinates << ',' << r.max_rel_error << ',' << r.max_abs_error << ',' << r.tolerance
           << ',' << (r.passed ? 1 : 0) << '\n';
    return os.str();
}

namespace {

class Fixture {
public:
    explicit Fixture(std::uint64_t seed) : rng_(seed) {}

    RealTensor normal(Shape shape, double stddev = 1.0) {
        RealTensor t(std::move(shape));
        std::normal_distribution<double> d(0.0, stddev);
        for (auto& v : t.data()) v = d(rng_);
        return t;
    }

    ComplexTensor complex_normal(Shape shape, double stddev = 1.0) {
        ComplexTensor t(std::move(shape));
        std::normal_distribution<double> d(0.0, stddev);
        for (auto& v : t.data()) {
            const double re = d(rng_);
            v = Complex(re, d(rng_));
        }
        return t;
    }

    void randomize(std::span<double> values, double stddev) {
        std::normal_distribution<double> d(0.0, stddev);
        for (auto& v : values) v = d(rng_);
    }

    void perturb(std::span<double> values, double stddev) {
        std::normal_distribution<double> d(0.0, stddev);
        for (auto& v : values) v += d(rng_);
    }

    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

private:
    std::mt19937_64 rng_;
};

double weighted_sum(const RealTensor& y, const RealTensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

std::span<double> as_real(ComplexTensor& t) { return {reinterpret_cast<double*>(t.raw()), t.size() * 2}; }

class SuiteRunner {
public:
    SuiteRunner(const GradSuiteOptions& opt, GradReport& report) : opt_(opt), report_(report) {}

    // Compares analytic gradients (in order) against finite differences of `loss`
    // over `params`.
    void check(const std::string& layer, const std::vector<std::string>& names, std::vector<std::span<double>> params,
               std::vector<std::vector<double>> analytic, const std::function<double()>& loss, double tol) {
        const auto numeric = finite_diff_scalar(loss, params, opt_.eps);
        for (std::size_t i = 0; i < names.size(); ++i) add(layer + "." + names[i], analytic[i], numeric[i], tol);
    }

    void add(const std::string& full, std::vector<double> analytic, const std::vector<double>& numeric, double tol) {
        if (opt_.fault && opt_.fault->tensor == full) {
            if (opt_.fault->coordinate >= analytic.size()) {
                throw ArgumentError("fault coordinate " + std::to_string(opt_.fault->coordinate) + " outside " +
                                    full + " (" + std::to_string(analytic.size()) + " coordinates)");
            }
            analytic[opt_.fault->coordinate] *= opt_.fault->factor;
            fault_applied_ = true;
        }
        report_.rows.push_back(compare_gradients(full, analytic, numeric, tol));
    }

    double eps() const { return opt_.eps; }

    double layer_tol() const { return opt_.layer_tolerance; }
    double model_tol() const { return opt_.model_tolerance; }
    bool fault_applied() const { return fault_applied_; }

private:
    bool fault_applied_ = false;
    const GradSuiteOptions& opt_;
    GradReport& report_;
};

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }
std::vector<double> to_vec(const RealTensor& t) { return to_vec(t.data()); }

void check_layer_norm(SuiteRunner& run, Fixture& fx) {
    RealTensor x = fx.normal({2, 3, 5});
    RealTensor gamma = fx.normal({5});
    RealTensor beta = fx.normal({5});
    RealTensor r = fx.normal({2, 3, 5});
    LayerNormCache cache;
    layer_norm(x, gamma, beta, kLayerNormEps, &cache);
    RealTensor gg({5}), gb({5});
    RealTensor gx = layer_norm_backward(cache, gamma, r, gg, gb);
    auto loss = [&] { return weighted_sum(layer_norm(x, gamma, beta), r); };
    run.check("layer_norm", {"x", "gamma", "beta"}, {x.data(), gamma.data(), beta.data()},
              {to_vec(gx), to_vec(gg), to_vec(gb)}, loss, run.layer_tol());
}

void check_filter(SuiteRunner& run, Fixture& fx) {
    FeatureMap x = fx.normal({1, 4, 6, 2});
    FilterWeights w{fx.complex_normal({4, half_width(6), 2})};
    RealTensor r = fx.normal({1, 4, 6, 2});
    FilterGrads g = filter_enhance_backward(x, w, r);
    auto loss = [&] { return weighted_sum(filter_enhance_forward(x, w), r); };
    run.check("filter_enhance", {"x", "w"}, {x.data(), as_real(w.data)}, {to_vec(g.x), to_vec(as_real(g.w))}, loss,
              run.layer_tol());
}

void check_wmsa(SuiteRunner& run, Fixture& fx) {
    const std::size_t c = 4, heads = 2, m = 2;
    FeatureMap map = fx.normal({1, 4, 4, c});
    WindowGrid g = window_partition(map, m);
    AttentionParams p = AttentionParams::zeros(c, heads, m);
    for (RealTensor* t : {&p.w_qkv, &p.b_qkv, &p.w_out, &p.b_out, &p.bias_table}) fx.randomize(t->data(), 0.5);
    WindowGrid r{fx.normal(g.windows.shape()), g.rows, g.cols, g.window};
    WmsaGrads grads = wmsa_backward(g, p, r);
    auto loss = [&] { return weighted_sum(wmsa_forward(g, p).windows, r.windows); };
    run.check("wmsa", {"x", "w_qkv", "b_qkv", "w_out", "b_out", "bias_table"},
              {g.windows.data(), p.w_qkv.data(), p.b_qkv.data(), p.w_out.data(), p.b_out.data(), p.bias_table.data()},
              {to_vec(grads.input.windows), to_vec(grads.params.w_qkv), to_vec(grads.params.b_qkv),
               to_vec(grads.params.w_out), to_vec(grads.params.b_out), to_vec(grads.params.bias_table)},
              loss, run.layer_tol());
}

void check_eca(SuiteRunner& run, Fixture& fx) {
    FeatureMap x = fx.normal({2, 3, 3, 5});
    EcaParams p{fx.normal({3})};
    RealTensor r = fx.normal(x.shape());
    EcaGrads g = eca_backward(x, p, r);
    auto loss = [&] { return weighted_sum(eca_forward(x, p), r); };
    run.check("eca", {"x", "kernel"}, {x.data(), p.kernel.data()}, {to_vec(g.x), to_vec(g.kernel)}, loss,
              run.layer_tol());
}

void check_se(SuiteRunner& run, Fixture& fx) {
    FeatureMap x = fx.normal({2, 2, 3, 8});
    SeParams p = SeParams::zeros(8, 2);
    for (RealTensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) fx.randomize(t->data(), 0.5);
    RealTensor r = fx.normal(x.shape());
    SeGrads g = se_backward(x, p, r);
    auto loss = [&] { return weighted_sum(se_forward(x, p), r); };
    run.check("se", {"x", "w1", "b1", "w2", "b2"}, {x.data(), p.w1.data(), p.b1.data(), p.w2.data(), p.b2.data()},
              {to_vec(g.x), to_vec(g.params.w1), to_vec(g.params.b1), to_vec(g.params.w2), to_vec(g.params.b2)}, loss,
              run.layer_tol());
}

void check_ffn(SuiteRunner& run, Fixture& fx) {
    RealTensor x = fx.normal({2, 3, 4});
    FfnParams p = FfnParams::zeros(4, 2);
    for (RealTensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) fx.randomize(t->data(), 0.5);
    RealTensor r = fx.normal(x.shape());
    FfnCache cache;
    ffn_forward(x, p, &cache);
    FfnParams g = FfnParams::zeros(4, 2);
    RealTensor gx = ffn_backward(p, cache, r, g);
    auto loss = [&] { return weighted_sum(ffn_forward(x, p), r); };
    run.check("ffn", {"x", "w1", "b1", "w2", "b2"}, {x.data(), p.w1.data(), p.b1.data(), p.w2.data(), p.b2.data()},
              {to_vec(gx), to_vec(g.w1), to_vec(g.b1), to_vec(g.w2), to_vec(g.b2)}, loss, run.layer_tol());
}

void check_patch_embed(SuiteRunner& run, Fixture& fx) {
    const std::size_t patch = 4, c = 6;
    RealTensor image = fx.normal({1, 8, 8, 3});
    PatchEmbedParams p{fx.normal({patch * patch * 3, c}, 0.3), fx.normal({c}), {fx.normal({c}), fx.normal({c})}};
    RealTensor r = fx.normal({1, 2, 2, c});
    PatchEmbedCache cache;
    patch_embed(image, p, patch, &cache);
    PatchEmbedParams g{RealTensor(p.w.shape()), RealTensor({c}), {RealTensor({c}), RealTensor({c})}};
    RealTensor gi = patch_embed_backward(p, patch, image.shape(), cache, r, g);
    auto loss = [&] { return weighted_sum(patch_embed(image, p, patch), r); };
    run.check("patch_embed", {"image", "w", "b", "norm.gamma", "norm.beta"},
              {image.data(), p.w.data(), p.b.data(), p.norm.gamma.data(), p.norm.beta.data()},
              {to_vec(gi), to_vec(g.w), to_vec(g.b), to_vec(g.norm.gamma), to_vec(g.norm.beta)}, loss,
              run.layer_tol());
}

void check_patch_merge(SuiteRunner& run, Fixture& fx) {
    const std::size_t c = 3;
    FeatureMap x = fx.normal({1, 4, 4, c});
    PatchMergeParams p{{fx.normal({4 * c}), fx.normal({4 * c})}, fx.normal({4 * c, 2 * c}, 0.5)};
    RealTensor r = fx.normal({1, 2, 2, 2 * c});
    PatchMergeCache cache;
    patch_merge(x, p, &cache);
    PatchMergeParams g{{RealTensor({4 * c}), RealTensor({4 * c})}, RealTensor(p.w.shape())};
    FeatureMap gx = patch_merge_backward(p, x.shape(), cache, r, g);
    auto loss = [&] { return weighted_sum(patch_merge(x, p), r); };
    run.check("patch_merge", {"x", "norm.gamma", "norm.beta", "w"},
              {x.data(), p.norm.gamma.data(), p.norm.beta.data(), p.w.data()},
              {to_vec(gx), to_vec(g.norm.gamma), to_vec(g.norm.beta), to_vec(g.w)}, loss, run.layer_tol());
}

void check_head(SuiteRunner& run, Fixture& fx) {
    const std::size_t c = 4, k = 3;
    FeatureMap x = fx.normal({2, 2, 2, c});
    HeadParams p{{fx.normal({c}), fx.normal({c})}, fx.normal({c, k}), fx.normal({k})};
    RealTensor r = fx.normal({2, k});
    HeadCache cache;
    head_forward(x, p, &cache);
    HeadParams g{{RealTensor({c}), RealTensor({c})}, RealTensor({c, k}), RealTensor({k})};
    FeatureMap gx = head_backward(p, cache, r, g);
    auto loss = [&] { return weighted_sum(head_forward(x, p), r); };
    run.check("head", {"x", "norm.gamma", "norm.beta", "w", "b"},
              {x.data(), p.norm.gamma.data(), p.norm.beta.data(), p.w.data(), p.b.data()},
              {to_vec(gx), to_vec(g.norm.gamma), to_vec(g.norm.beta), to_vec(g.w), to_vec(g.b)}, loss,
              run.layer_tol());
}

ModelConfig suite_mini_config() {
    ModelConfig cfg;
    cfg.patch = 4;
    cfg.embed_dim = 8;
    cfg.depths = {2};
    cfg.window = 2;
    cfg.image_size = 8;
    cfg.num_classes = 3;
    cfg.variant = Variant::FwNetEca;
    return cfg;
}

// Randomises every parameter of a model so that no gradient is structurally tiny.
void randomize_model(FwNetModel& m, Fixture& fx, double stddev) {
    for (auto& p : parameters(m)) fx.randomize(p.values, stddev);
    for (auto& stage : m.stages)
        for (auto& block : stage.blocks)
            if (auto* fb = std::get_if<FilterBlock>(&block); fb && fb->filter)
                for (auto& v : fb->filter->data.data()) v += Complex(1.0, 0.0);
}

void check_blocks(SuiteRunner& run, Fixture& fx) {
    FwNetModel m = zeros_like(suite_mini_config());
    randomize_model(m, fx, 0.4);
    FeatureMap x = fx.normal({1, 2, 2, 8});
    RealTensor r = fx.normal(x.shape());
    {
        auto& blk = std::get<AttnBlock>(m.stages[0].blocks[0]);
        AttnBlockCache cache;
        attn_block_forward(x, blk, &cache);
        FwNetModel gm = zeros_like(m);
        auto& g = std::get<AttnBlock>(gm.stages[0].blocks[0]);
        FeatureMap gx = attn_block_backward(blk, cache, r, g);
        auto loss = [&] { return weighted_sum(attn_block_forward(x, blk), r); };
        run.check("attn_block", {"x", "attn.w_qkv", "attn.bias_table", "ffn.w1", "norm1.gamma"},
                  {x.data(), blk.attn.w_qkv.data(), blk.attn.bias_table.data(), blk.ffn.w1.data(),
                   blk.norm1.gamma.data()},
                  {to_vec(gx), to_vec(g.attn.w_qkv), to_vec(g.attn.bias_table), to_vec(g.ffn.w1),
                   to_vec(g.norm1.gamma)},
                  loss, run.layer_tol());
    }
    {
        auto& blk = std::get<FilterBlock>(m.stages[0].blocks[1]);
        FilterBlockCache cache;
        filter_block_forward(x, blk, &cache);
        FwNetModel gm = zeros_like(m);
        auto& g = std::get<FilterBlock>(gm.stages[0].blocks[1]);
        FeatureMap gx = filter_block_backward(blk, cache, r, g);
        auto loss = [&] { return weighted_sum(filter_block_forward(x, blk), r); };
        run.check("filter_block", {"x", "filter", "eca.kernel", "norm1.gamma", "ffn.w2"},
                  {x.data(), as_real(blk.filter->data), blk.eca->kernel.data(), blk.norm1->gamma.data(),
                   blk.ffn.w2.data()},
                  {to_vec(gx), to_vec(as_real(g.filter->data)), to_vec(g.eca->kernel), to_vec(g.norm1->gamma),
                   to_vec(g.ffn.w2)},
                  loss, run.layer_tol());
    }
}

void check_model(SuiteRunner& run, Fixture& fx) {
    FwNetModel m = init_params(suite_mini_config(), 7);
    randomize_model(m, fx, 0.3);
    RealTensor image = fx.normal({2, 8, 8, 3});
    const std::vector<std::size_t> labels{0, 2};
    LossAndGrads lg = model_backward(image, labels, m);
    auto loss = [&] { return cross_entropy(model_forward(image, m), labels); };
    std::vector<std::string> names;
    std::vector<std::span<double>> spans;
    std::vector<std::vector<double>> analytic;
    auto grads = parameters(std::as_const(lg.grads));
    auto params = parameters(m);
    for (std::size_t i = 0; i < params.size(); ++i) {
        names.push_back(params[i].name);
        spans.push_back(params[i].values);
        analytic.push_back(to_vec(grads[i].values));
    }
    run.check("model", names, spans, analytic, loss, run.model_tol());
}

// Full-size toy classifier; a few sampled coordinates per tensor keep the cost down.
void check_mini_model(SuiteRunner& run, Fixture& fx, std::size_t samples) {
    FwNetModel m = init_params(ModelConfig::mini(), 11);
    for (auto& p : parameters(m)) fx.perturb(p.values, 0.05);
    const std::size_t side = m.config.image_size;
    RealTensor image = fx.normal({1, side, side, m.config.in_chans});
    const std::vector<std::size_t> labels{1};
    LossAndGrads lg = model_backward(image, labels, m);
    auto loss = [&] { return cross_entropy(model_forward(image, m), labels); };
    auto grads = parameters(std::as_const(lg.grads));
    auto params = parameters(m);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = params[i].values.size();
        std::vector<std::span<double>> spans;
        std::vector<double> analytic;
        for (std::size_t k = 0; k < std::min(samples, n); ++k) {
            const std::size_t j = n <= samples ? k : fx.index(n);
            spans.push_back(params[i].values.subspan(j, 1));
            analytic.push_back(grads[i].values[j]);
        }
        std::vector<double> numeric;
        for (const auto& d : finite_diff_scalar(loss, spans, run.eps())) numeric.push_back(d[0]);
        run.add("mini_model." + params[i].name, analytic, numeric, run.model_tol());
    }
}

}  // namespace

GradReport run_suite(std::uint64_t seed, const GradSuiteOptions& options) {
    GradReport report;
    SuiteRunner run(options, report);
    Fixture fx(seed);
    check_filter(run, fx);
    check_wmsa(run, fx);
    check_eca(run, fx);
    check_se(run, fx);
    check_ffn(run, fx);
    check_layer_norm(run, fx);
    check_patch_embed(run, fx);
    check_patch_merge(run, fx);
    check_head(run, fx);
    check_blocks(run, fx);
    check_model(run, fx);
    if (options.mini_samples > 0) check_mini_model(run, fx, options.mini_samples);
    if (options.fault && !run.fault_applied()) {
        throw ArgumentError("fault target '" + options.fault->tensor + "' is not a checked tensor");
    }
    return report;
}

}  // namespace fwnet
