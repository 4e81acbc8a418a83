#include "fwnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fwnet {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void require_shape(const RealTensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw ShapeError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                         ", got " + shape_to_string(t.shape()));
    }
}

RealTensor add(const RealTensor& a, const RealTensor& b) {
    RealTensor out = a;
    add_inplace(out, b);
    return out;
}

void add_inplace(RealTensor& a, const RealTensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
    }
    double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0, n = a.size(); i < n; ++i) pa[i] += pb[i];
}

RealTensor scale(const RealTensor& a, double s) {
    RealTensor out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

double max_abs_diff(const RealTensor& a, const RealTensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(const RealTensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

namespace {

// c[p,r] += a[p,q] · b[q,r], all row-major contiguous.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
                     std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        double* crow = c + i * r;
        const double* arow = a + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const double av = arow[k];
            const double* brow = b + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

RealTensor matmul(const RealTensor& a, const RealTensor& b) {
    auto fail = [&] {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    };
    if (a.rank() < 2 || b.rank() < 2) fail();
    const std::size_t p = a.dim(a.rank() - 2);
    const std::size_t q = a.dim(a.rank() - 1);
    const std::size_t r = b.dim(b.rank() - 1);
    if (b.dim(b.rank() - 2) != q) fail();

    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    Shape lead;
    if (lead_a == lead_b) {
        lead = lead_a;
    } else if (lead_a.empty()) {
        lead = lead_b;
    } else if (lead_b.empty()) {
        lead = lead_a;
    } else {
        fail();
    }
    const std::size_t batch = shape_numel(lead);
    const std::size_t stride_a = lead_a.empty() ? 0 : p * q;
    const std::size_t stride_b = lead_b.empty() ? 0 : q * r;

    Shape out_shape = lead;
    out_shape.push_back(p);
    out_shape.push_back(r);
    RealTensor out(out_shape);
    for (std::size_t n = 0; n < batch; ++n) {
        gemm_accumulate(a.raw() + n * stride_a, b.raw() + n * stride_b, out.raw() + n * p * r, p,
                        q, r);
    }
    return out;
}

RealTensor transpose_last2(const RealTensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2 " + shape_to_string(a.shape()));
    const std::size_t p = a.dim(a.rank() - 2);
    const std::size_t q = a.dim(a.rank() - 1);
    Shape s = a.shape();
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    RealTensor out(s);
    const std::size_t batch = a.size() / (p * q);
    for (std::size_t n = 0; n < batch; ++n) {
        const double* src = a.raw() + n * p * q;
        double* dst = out.raw() + n * p * q;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
    }
    return out;
}

RealTensor linear(const RealTensor& x, const RealTensor& w, const RealTensor& bias) {
    if (w.rank() != 2 || x.rank() < 1 || x.dim(x.rank() - 1) != w.dim(0)) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(w.shape()));
    }
    const std::size_t in = w.dim(0);
    const std::size_t out_features = w.dim(1);
    if (!bias.empty() && bias.shape() != Shape{out_features}) {
        throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                         shape_to_string(w.shape()));
    }
    const std::size_t rows = x.size() / in;
    Shape s = x.shape();
    s.back() = out_features;
    RealTensor y(s);
    if (!bias.empty()) {
        for (std::size_t n = 0; n < rows; ++n)
            std::copy(bias.raw(), bias.raw() + out_features, y.raw() + n * out_features);
    }
    gemm_accumulate(x.raw(), w.raw(), y.raw(), rows, in, out_features);
    return y;
}

RealTensor linear_backward_accumulate(const RealTensor& x, const RealTensor& w,
                                      const RealTensor& grad_y, RealTensor& grad_w,
                                      RealTensor* grad_bias) {
    const std::size_t in = w.dim(0);
    const std::size_t out_features = w.dim(1);
    const std::size_t rows = x.size() / in;
    if (grad_y.size() != rows * out_features || grad_w.shape() != w.shape()) {
        throw ShapeError("linear_backward: grad " + shape_to_string(grad_y.shape()) +
                         " inconsistent with input " + shape_to_string(x.shape()) + " and weight " +
                         shape_to_string(w.shape()));
    }
    RealTensor gx(x.shape());
    for (std::size_t n = 0; n < rows; ++n) {
        const double* gy = grad_y.raw() + n * out_features;
        const double* xr = x.raw() + n * in;
        double* gxr = gx.raw() + n * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double* wr = w.raw() + k * out_features;
            double* gwr = grad_w.raw() + k * out_features;
            double acc = 0.0;
            const double xv = xr[k];
            for (std::size_t j = 0; j < out_features; ++j) {
                acc += gy[j] * wr[j];
                gwr[j] += xv * gy[j];
            }
            gxr[k] = acc;
        }
        if (grad_bias) {
            double* gb = grad_bias->raw();
            for (std::size_t j = 0; j < out_features; ++j) gb[j] += gy[j];
        }
    }
    return gx;
}

LinearGrads linear_backward(const RealTensor& x, const RealTensor& w, bool has_bias,
                            const RealTensor& grad_y) {
    LinearGrads g;
    g.w = RealTensor(w.shape());
    if (has_bias) g.bias = RealTensor({w.dim(1)});
    g.x = linear_backward_accumulate(x, w, grad_y, g.w, has_bias ? &g.bias : nullptr);
    return g;
}

RealTensor softmax_lastaxis(const RealTensor& x) {
    if (x.rank() == 0 || x.dim(x.rank() - 1) == 0) {
        throw ArgumentError("softmax_lastaxis: last axis must be non-empty");
    }
    RealTensor y(x.shape());
    const std::size_t n = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / n;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.raw() + r * n;
        double* out = y.raw() + r * n;
        const double m = *std::max_element(in, in + n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = std::exp(in[i] - m);
            sum += out[i];
        }
        const double inv = 1.0 / sum;
        for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
    }
    return y;
}

RealTensor layer_norm(const RealTensor& x, const RealTensor& gamma, const RealTensor& beta,
                      double eps, LayerNormCache* cache) {
    if (!(eps > 0.0)) throw ArgumentError("layer_norm: eps must be positive");
    const std::size_t c = x.rank() ? x.dim(x.rank() - 1) : 0;
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
                         shape_to_string(beta.shape()) + " do not match input " +
                         shape_to_string(x.shape()));
    }
    const std::size_t rows = c ? x.size() / c : 0;
    RealTensor y(x.shape());
    if (cache) {
        cache->normalized = RealTensor(x.shape());
        cache->inv_std.assign(rows, 0.0);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.raw() + r * c;
        double mean = 0.0;
        for (std::size_t i = 0; i < c; ++i) mean += in[i];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) var += (in[i] - mean) * (in[i] - mean);
        var /= static_cast<double>(c);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* out = y.raw() + r * c;
        double* xhat = cache ? cache->normalized.raw() + r * c : nullptr;
        for (std::size_t i = 0; i < c; ++i) {
            const double h = (in[i] - mean) * inv_std;
            if (xhat) xhat[i] = h;
            out[i] = h * gamma[i] + beta[i];
        }
        if (cache) cache->inv_std[r] = inv_std;
    }
    return y;
}

RealTensor layer_norm_backward(const LayerNormCache& cache, const RealTensor& gamma,
                               const RealTensor& grad_y, RealTensor& grad_gamma,
                               RealTensor& grad_beta) {
    if (grad_y.shape() != cache.normalized.shape()) {
        throw ShapeError("layer_norm_backward: grad " + shape_to_string(grad_y.shape()) +
                         " does not match forward " + shape_to_string(cache.normalized.shape()));
    }
    const std::size_t c = gamma.size();
    const std::size_t rows = cache.inv_std.size();
    RealTensor gx(grad_y.shape());
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = grad_y.raw() + r * c;
        const double* xh = cache.normalized.raw() + r * c;
        double* out = gx.raw() + r * c;
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const double g = gy[i] * gamma[i];
            sum_g += g;
            sum_gx += g * xh[i];
            grad_gamma[i] += gy[i] * xh[i];
            grad_beta[i] += gy[i];
        }
        const double s = cache.inv_std[r];
        for (std::size_t i = 0; i < c; ++i) {
            const double g = gy[i] * gamma[i];
            out[i] = s * (g - inv_c * sum_g - xh[i] * inv_c * sum_gx);
        }
    }
    return gx;
}

RealTensor gelu(const RealTensor& x) {
    RealTensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        y[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
    }
    return y;
}

RealTensor gelu_backward(const RealTensor& x, const RealTensor& grad_y) {
    if (x.shape() != grad_y.shape()) {
        throw ShapeError("gelu_backward: shapes " + shape_to_string(x.shape()) + " and " +
                         shape_to_string(grad_y.shape()) + " differ");
    }
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    RealTensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] = grad_y[i] * (cdf + v * pdf);
    }
    return g;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

RealTensor sigmoid(const RealTensor& x) {
    RealTensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
    return y;
}

RealTensor global_avg_pool(const FeatureMap& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    if (hw == 0) throw ArgumentError("global_avg_pool: empty spatial extent");
    RealTensor y({b, c});
    for (std::size_t n = 0; n < b; ++n) {
        double* out = y.raw() + n * c;
        for (std::size_t p = 0; p < hw; ++p) {
            const double* in = x.raw() + (n * hw + p) * c;
            for (std::size_t k = 0; k < c; ++k) out[k] += in[k];
        }
        for (std::size_t k = 0; k < c; ++k) out[k] /= static_cast<double>(hw);
    }
    return y;
}

FeatureMap global_avg_pool_backward(const Shape& input_shape, const RealTensor& grad_y) {
    if (input_shape.size() != 4 || grad_y.shape() != Shape{input_shape[0], input_shape[3]}) {
        throw ShapeError("global_avg_pool_backward: grad " + shape_to_string(grad_y.shape()) +
                         " inconsistent with input " + shape_to_string(input_shape));
    }
    const std::size_t b = input_shape[0], hw = input_shape[1] * input_shape[2], c = input_shape[3];
    FeatureMap gx(input_shape);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) gx[(n * hw + p) * c + k] = grad_y[n * c + k] * inv;
    return gx;
}

}  // namespace fwnet
