#include "fwnet/attention.hpp"

#include <algorithm>
#include <cmath>

namespace fwnet {

WindowGrid window_partition(const FeatureMap& x, std::size_t window) {
    if (x.rank() != 4) throw ShapeError("window_partition: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    if (window == 0) throw ArgumentError("window_partition: window size must be positive");
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % window != 0 || w % window != 0) {
        throw ArgumentError("window_partition: map " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by window " + std::to_string(window));
    }
    WindowGrid g;
    g.rows = h / window;
    g.cols = w / window;
    g.window = window;
    const std::size_t tokens = window * window;
    g.windows = RealTensor({b * g.rows * g.cols, tokens, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t wr = 0; wr < g.rows; ++wr)
            for (std::size_t wc = 0; wc < g.cols; ++wc) {
                const std::size_t win_idx = (n * g.rows + wr) * g.cols + wc;
                for (std::size_t i = 0; i < window; ++i) {
                    const double* src = x.raw() + ((n * h + wr * window + i) * w + wc * window) * c;
                    double* dst = g.windows.raw() + (win_idx * tokens + i * window) * c;
                    std::copy(src, src + window * c, dst);
                }
            }
    return g;
}

FeatureMap window_reverse(const WindowGrid& g, std::size_t height, std::size_t width) {
    const std::size_t m = g.window;
    if (g.windows.rank() != 3 || m == 0 || g.rows * m != height || g.cols * m != width ||
        g.windows.dim(1) != m * m || g.windows.dim(0) % (g.rows * g.cols) != 0) {
        throw ShapeError("window_reverse: grid " + shape_to_string(g.windows.shape()) + " (" +
                         std::to_string(g.rows) + "x" + std::to_string(g.cols) + " windows of " +
                         std::to_string(m) + ") inconsistent with map " + std::to_string(height) +
                         "x" + std::to_string(width));
    }
    const std::size_t c = g.windows.dim(2);
    const std::size_t b = g.windows.dim(0) / (g.rows * g.cols);
    const std::size_t tokens = m * m;
    FeatureMap x({b, height, width, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t wr = 0; wr < g.rows; ++wr)
            for (std::size_t wc = 0; wc < g.cols; ++wc) {
                const std::size_t win_idx = (n * g.rows + wr) * g.cols + wc;
                for (std::size_t i = 0; i < m; ++i) {
                    const double* src = g.windows.raw() + (win_idx * tokens + i * m) * c;
                    double* dst = x.raw() + ((n * height + wr * m + i) * width + wc * m) * c;
                    std::copy(src, src + m * c, dst);
                }
            }
    return x;
}

RelativeIndex relative_position_index(std::size_t window) {
    if (window == 0) throw ArgumentError("relative_position_index: window size must be positive");
    const std::size_t m = window;
    const std::size_t t = m * m;
    const std::size_t span = 2 * m - 1;
    RelativeIndex r;
    r.window = m;
    r.index.resize(t * t);
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t ri = i / m, ci = i % m;
        for (std::size_t j = 0; j < t; ++j) {
            const std::size_t rj = j / m, cj = j % m;
            // Δ = position of j relative to i, shifted into [0, 2M−2]
            const std::size_t dr = rj + m - 1 - ri;
            const std::size_t dc = cj + m - 1 - ci;
            r.index[i * t + j] = static_cast<std::uint32_t>(dr * span + dc);
        }
    }
    return r;
}

AttentionParams AttentionParams::zeros(std::size_t channels, std::size_t heads, std::size_t window) {
    if (heads == 0 || channels % heads != 0) {
        throw ConfigError("attention: channels " + std::to_string(channels) +
                          " not divisible by heads " + std::to_string(heads));
    }
    const std::size_t span = 2 * window - 1;
    AttentionParams p;
    p.w_qkv = RealTensor({channels, 3 * channels});
    p.b_qkv = RealTensor({3 * channels});
    p.w_out = RealTensor({channels, channels});
    p.b_out = RealTensor({channels});
    p.bias_table = RealTensor({span * span, heads});
    p.rel_index = relative_position_index(window);
    p.heads = heads;
    return p;
}

namespace {

void check_params(const WindowGrid& g, const AttentionParams& p, const char* what) {
    const std::size_t c = p.channels();
    const std::size_t m = p.window();
    if (g.windows.rank() != 3 || g.windows.dim(2) != c || g.windows.dim(1) != m * m ||
        p.w_qkv.shape() != Shape{c, 3 * c} || p.heads == 0 || c % p.heads != 0 ||
        p.bias_table.shape() != Shape{(2 * m - 1) * (2 * m - 1), p.heads}) {
        throw ShapeError(std::string(what) + ": windows " + shape_to_string(g.windows.shape()) +
                         " incompatible with attention params (C=" + std::to_string(c) +
                         ", M=" + std::to_string(m) + ", heads=" + std::to_string(p.heads) + ")");
    }
}

// Scratch for one (window, head) pair: contiguous per-head Q, Kᵀ, V.
struct HeadBuffers {
    std::vector<double> q, kt, v, logits;
    void resize(std::size_t t, std::size_t d) {
        q.assign(t * d, 0.0);
        kt.assign(d * t, 0.0);
        v.assign(t * d, 0.0);
        logits.assign(t, 0.0);
    }
};

void load_head(const double* qkv, std::size_t t, std::size_t c, std::size_t d, std::size_t h,
               HeadBuffers& buf) {
    for (std::size_t i = 0; i < t; ++i) {
        const double* row = qkv + i * 3 * c;
        for (std::size_t e = 0; e < d; ++e) {
            buf.q[i * d + e] = row[h * d + e];
            buf.kt[e * t + i] = row[c + h * d + e];
            buf.v[i * d + e] = row[2 * c + h * d + e];
        }
    }
}

}  // namespace

WindowGrid wmsa_forward(const WindowGrid& g, const AttentionParams& p, WmsaCache* cache) {
    check_params(g, p, "wmsa_forward");
    const std::size_t nw = g.windows.dim(0);
    const std::size_t t = g.windows.dim(1);
    const std::size_t c = p.channels();
    const std::size_t heads = p.heads;
    const std::size_t d = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    RealTensor qkv = linear(g.windows, p.w_qkv, p.b_qkv);
    RealTensor context({nw, t, c});
    if (cache) cache->attn = RealTensor({nw, heads, t, t});

    HeadBuffers buf;
    buf.resize(t, d);
    for (std::size_t w = 0; w < nw; ++w) {
        const double* wq = qkv.raw() + w * t * 3 * c;
        for (std::size_t h = 0; h < heads; ++h) {
            load_head(wq, t, c, d, h, buf);
            double* logits = cache ? cache->attn.raw() + (w * heads + h) * t * t : nullptr;
            for (std::size_t i = 0; i < t; ++i) {
                double* row = logits ? logits + i * t : buf.logits.data();
                const std::uint32_t* rel = p.rel_index.index.data() + i * t;
                for (std::size_t j = 0; j < t; ++j) row[j] = p.bias_table[rel[j] * heads + h];
                for (std::size_t e = 0; e < d; ++e) {
                    const double qe = buf.q[i * d + e] * scale;
                    const double* kr = buf.kt.data() + e * t;
                    for (std::size_t j = 0; j < t; ++j) row[j] += qe * kr[j];
                }
                double mx = row[0];
                for (std::size_t j = 1; j < t; ++j) mx = std::max(mx, row[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                const double inv = 1.0 / sum;
                for (std::size_t j = 0; j < t; ++j) row[j] *= inv;

                double* out = context.raw() + (w * t + i) * c + h * d;
                for (std::size_t j = 0; j < t; ++j) {
                    const double a = row[j];
                    const double* vr = buf.v.data() + j * d;
                    for (std::size_t e = 0; e < d; ++e) out[e] += a * vr[e];
                }
            }
        }
    }

    WindowGrid out{linear(context, p.w_out, p.b_out), g.rows, g.cols, g.window};
    if (cache) {
        cache->input = g.windows;
        cache->qkv = std::move(qkv);
        cache->context = std::move(context);
    }
    return out;
}

RealTensor wmsa_backward_accumulate(const AttentionParams& p, const WmsaCache& cache,
                                    const RealTensor& grad_out, AttentionParams& grads) {
    const std::size_t nw = cache.input.dim(0);
    const std::size_t t = cache.input.dim(1);
    const std::size_t c = p.channels();
    const std::size_t heads = p.heads;
    const std::size_t d = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    if (grad_out.shape() != cache.input.shape()) {
        throw ShapeError("wmsa_backward: grad " + shape_to_string(grad_out.shape()) +
                         " does not match forward windows " + shape_to_string(cache.input.shape()));
    }

    RealTensor d_context = linear_backward_accumulate(cache.context, p.w_out, grad_out, grads.w_out, &grads.b_out);
    RealTensor d_qkv({nw, t, 3 * c});

    HeadBuffers buf;
    buf.resize(t, d);
    std::vector<double> d_attn(t * t), dq(t * d), dk(t * d), dv(t * d), dctx(t * d);
    for (std::size_t w = 0; w < nw; ++w) {
        const double* wq = cache.qkv.raw() + w * t * 3 * c;
        for (std::size_t h = 0; h < heads; ++h) {
            load_head(wq, t, c, d, h, buf);
            const double* attn = cache.attn.raw() + (w * heads + h) * t * t;
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t e = 0; e < d; ++e) dctx[i * d + e] = d_context[(w * t + i) * c + h * d + e];
            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);

            for (std::size_t i = 0; i < t; ++i) {
                const double* a = attn + i * t;
                const double* gi = dctx.data() + i * d;
                double* da = d_attn.data() + i * t;
                // dA = dctx · Vᵀ ; dV += Aᵀ · dctx
                for (std::size_t j = 0; j < t; ++j) {
                    const double* vr = buf.v.data() + j * d;
                    double acc = 0.0;
                    for (std::size_t e = 0; e < d; ++e) acc += gi[e] * vr[e];
                    da[j] = acc;
                    double* dvr = dv.data() + j * d;
                    const double aij = a[j];
                    for (std::size_t e = 0; e < d; ++e) dvr[e] += aij * gi[e];
                }
                // softmax backward
                double dot = 0.0;
                for (std::size_t j = 0; j < t; ++j) dot += a[j] * da[j];
                const std::uint32_t* rel = p.rel_index.index.data() + i * t;
                for (std::size_t j = 0; j < t; ++j) {
                    const double dl = a[j] * (da[j] - dot);
                    grads.bias_table[rel[j] * heads + h] += dl;
                    const double s = dl * scale;
                    double* dqr = dq.data() + i * d;
                    double* dkr = dk.data() + j * d;
                    const double* qr = buf.q.data() + i * d;
                    for (std::size_t e = 0; e < d; ++e) {
                        dqr[e] += s * buf.kt[e * t + j];
                        dkr[e] += s * qr[e];
                    }
                }
            }
            double* dst = d_qkv.raw() + w * t * 3 * c;
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t e = 0; e < d; ++e) {
                    dst[i * 3 * c + h * d + e] = dq[i * d + e];
                    dst[i * 3 * c + c + h * d + e] = dk[i * d + e];
                    dst[i * 3 * c + 2 * c + h * d + e] = dv[i * d + e];
                }
        }
    }
    return linear_backward_accumulate(cache.input, p.w_qkv, d_qkv, grads.w_qkv, &grads.b_qkv);
}

WmsaGrads wmsa_backward(const WindowGrid& g, const AttentionParams& p, const WindowGrid& grad_out,
                        const WmsaCache* cache) {
    check_params(g, p, "wmsa_backward");
    if (grad_out.windows.shape() != g.windows.shape()) {
        throw ShapeError("wmsa_backward: grad " + shape_to_string(grad_out.windows.shape()) +
                         " does not match windows " + shape_to_string(g.windows.shape()));
    }
    WmsaCache local;
    if (!cache || cache->input.shape() != g.windows.shape()) {
        wmsa_forward(g, p, &local);
        cache = &local;
    }
    WmsaGrads out;
    out.params = AttentionParams::zeros(p.channels(), p.heads, p.window());
    out.input = WindowGrid{wmsa_backward_accumulate(p, *cache, grad_out.windows, out.params),
                           g.rows, g.cols, g.window};
    return out;
}

}  // namespace fwnet
