#include "fwnet/channels.hpp"

namespace fwnet {

namespace {

void check_map(const FeatureMap& x, const char* what) {
    if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected [B,H,W,C], got " + shape_to_string(x.shape()));
}

FeatureMap scale_channels(const FeatureMap& x, const RealTensor& gate) {
    const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    FeatureMap y(x.shape());
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t i = (n * hw + p) * c + k;
                y[i] = gate[n * c + k] * x[i];
            }
    return y;
}

// Returns ∂L/∂gate [B,C] and writes gate·grad_y into grad_x.
RealTensor gate_backward(const FeatureMap& x, const RealTensor& gate, const FeatureMap& grad_y,
                         FeatureMap& grad_x) {
    const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    RealTensor d_gate({b, c});
    grad_x = FeatureMap(x.shape());
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t i = (n * hw + p) * c + k;
                d_gate[n * c + k] += grad_y[i] * x[i];
                grad_x[i] = gate[n * c + k] * grad_y[i];
            }
    return d_gate;
}

void add_pool_gradient(FeatureMap& grad_x, const RealTensor& d_pooled) {
    const std::size_t b = grad_x.dim(0), hw = grad_x.dim(1) * grad_x.dim(2), c = grad_x.dim(3);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) grad_x[(n * hw + p) * c + k] += d_pooled[n * c + k] * inv;
}

}  // namespace

FeatureMap eca_forward(const FeatureMap& x, const EcaParams& p, EcaCache* cache) {
    check_map(x, "eca_forward");
    require_shape(p.kernel, {3}, "eca kernel");
    const std::size_t b = x.dim(0), c = x.dim(3);
    RealTensor pooled = global_avg_pool(x);
    RealTensor gate({b, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t k = 0; k < c; ++k) {
            const double* g = pooled.raw() + n * c;
            double h = p.kernel[1] * g[k];
            if (k > 0) h += p.kernel[0] * g[k - 1];
            if (k + 1 < c) h += p.kernel[2] * g[k + 1];
            gate[n * c + k] = sigmoid(h);
        }
    FeatureMap y = scale_channels(x, gate);
    if (cache) {
        cache->pooled = std::move(pooled);
        cache->gate = std::move(gate);
    }
    return y;
}

FeatureMap eca_backward_accumulate(const FeatureMap& x, const EcaParams& p, const EcaCache& cache,
                                   const FeatureMap& grad_y, EcaParams& grads) {
    if (grad_y.shape() != x.shape()) {
        throw ShapeError("eca_backward: grad " + shape_to_string(grad_y.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    }
    const std::size_t b = x.dim(0), c = x.dim(3);
    FeatureMap gx;
    RealTensor d_gate = gate_backward(x, cache.gate, grad_y, gx);
    RealTensor d_pooled({b, c});
    for (std::size_t n = 0; n < b; ++n) {
        const double* g = cache.pooled.raw() + n * c;
        for (std::size_t k = 0; k < c; ++k) {
            const double s = cache.gate[n * c + k];
            const double dh = d_gate[n * c + k] * s * (1.0 - s);
            grads.kernel[1] += dh * g[k];
            d_pooled[n * c + k] += dh * p.kernel[1];
            if (k > 0) {
                grads.kernel[0] += dh * g[k - 1];
                d_pooled[n * c + k - 1] += dh * p.kernel[0];
            }
            if (k + 1 < c) {
                grads.kernel[2] += dh * g[k + 1];
                d_pooled[n * c + k + 1] += dh * p.kernel[2];
            }
        }
    }
    add_pool_gradient(gx, d_pooled);
    return gx;
}

EcaGrads eca_backward(const FeatureMap& x, const EcaParams& p, const FeatureMap& grad_y,
                      const EcaCache* cache) {
    check_map(x, "eca_backward");
    EcaCache local;
    if (!cache || cache->pooled.shape() != Shape{x.dim(0), x.dim(3)}) {
        eca_forward(x, p, &local);
        cache = &local;
    }
    EcaGrads out;
    out.kernel = RealTensor({3});
    EcaParams acc{RealTensor({3})};
    out.x = eca_backward_accumulate(x, p, *cache, grad_y, acc);
    out.kernel = std::move(acc.kernel);
    return out;
}

SeParams SeParams::zeros(std::size_t channels, std::size_t reduction) {
    if (reduction == 0 || channels % reduction != 0) {
        throw ConfigError("se: channels " + std::to_string(channels) + " not divisible by reduction " +
                          std::to_string(reduction));
    }
    const std::size_t hidden = channels / reduction;
    return SeParams{RealTensor({channels, hidden}), RealTensor({hidden}),
                    RealTensor({hidden, channels}), RealTensor({channels}), reduction};
}

FeatureMap se_forward(const FeatureMap& x, const SeParams& p, SeCache* cache) {
    check_map(x, "se_forward");
    if (p.w1.rank() != 2 || p.w1.dim(0) != x.dim(3)) {
        throw ShapeError("se_forward: w1 " + shape_to_string(p.w1.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
    }
    RealTensor pooled = global_avg_pool(x);
    RealTensor hidden = linear(pooled, p.w1, p.b1);
    RealTensor act = gelu(hidden);
    RealTensor gate = sigmoid(linear(act, p.w2, p.b2));
    FeatureMap y = scale_channels(x, gate);
    if (cache) *cache = SeCache{std::move(pooled), std::move(hidden), std::move(act), std::move(gate)};
    return y;
}

FeatureMap se_backward_accumulate(const FeatureMap& x, const SeParams& p, const SeCache& cache,
                                  const FeatureMap& grad_y, SeParams& grads) {
    if (grad_y.shape() != x.shape()) {
        throw ShapeError("se_backward: grad " + shape_to_string(grad_y.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    }
    FeatureMap gx;
    RealTensor d_gate = gate_backward(x, cache.gate, grad_y, gx);
    for (std::size_t i = 0; i < d_gate.size(); ++i) d_gate[i] *= cache.gate[i] * (1.0 - cache.gate[i]);
    RealTensor d_act = linear_backward_accumulate(cache.act, p.w2, d_gate, grads.w2, &grads.b2);
    RealTensor d_hidden = gelu_backward(cache.hidden, d_act);
    RealTensor d_pooled = linear_backward_accumulate(cache.pooled, p.w1, d_hidden, grads.w1, &grads.b1);
    add_pool_gradient(gx, d_pooled);
    return gx;
}

SeGrads se_backward(const FeatureMap& x, const SeParams& p, const FeatureMap& grad_y,
                    const SeCache* cache) {
    check_map(x, "se_backward");
    SeCache local;
    if (!cache || cache->pooled.shape() != Shape{x.dim(0), x.dim(3)}) {
        se_forward(x, p, &local);
        cache = &local;
    }
    SeGrads out;
    out.params = SeParams::zeros(p.w1.dim(0), p.reduction);
    out.x = se_backward_accumulate(x, p, *cache, grad_y, out.params);
    return out;
}

}  // namespace fwnet
