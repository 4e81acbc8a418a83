#include "fwnet/spectral.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace fwnet {

namespace {

Complex unit_root(std::size_t k, std::size_t n) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    return {std::cos(angle), std::sin(angle)};
}

void require_signal(const ComplexTensor& t, const char* what) {
    if (t.rank() != 1) {
        throw ShapeError(std::string(what) + ": expected a rank-1 signal, got " +
                         shape_to_string(t.shape()));
    }
    if (t.size() == 0) throw ArgumentError(std::string(what) + ": empty input");
}

ComplexTensor naive_transform(const ComplexTensor& in, bool inverse) {
    const std::size_t n = in.size();
    ComplexTensor out({n});
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) {
            Complex w = unit_root((k * j) % n, n);
            if (inverse) w = std::conj(w);
            acc += in[j] * w;
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    return out;
}

}  // namespace

ComplexTensor dft_1d_naive(const ComplexTensor& signal) {
    require_signal(signal, "dft_1d_naive");
    return naive_transform(signal, false);
}

ComplexTensor idft_1d_naive(const ComplexTensor& spectrum) {
    require_signal(spectrum, "idft_1d_naive");
    return naive_transform(spectrum, true);
}

FftPlan::FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw ArgumentError("FftPlan: empty input");
    std::size_t rest = n;
    // radix 4 first keeps the butterflies cheap
    while (rest % 4 == 0) {
        factors_.push_back(4);
        rest /= 4;
    }
    for (std::size_t f = 2; f * f <= rest; ++f) {
        while (rest % f == 0) {
            factors_.push_back(f);
            rest /= f;
        }
    }
    if (rest > 1) factors_.push_back(rest);
    twiddles_.resize(n);
    for (std::size_t k = 0; k < n; ++k) twiddles_[k] = unit_root(k, n);
    for (auto f : factors_) max_factor_ = std::max(max_factor_, f);
}

void FftPlan::execute(Complex* data, FftDirection dir) const { execute_lanes(data, 1, 1, dir); }

void FftPlan::execute_lanes(Complex* data, std::size_t stride, std::size_t lanes, FftDirection dir) const {
    if (n_ == 1 || lanes == 0) return;
    if (stride < lanes) throw ArgumentError("FftPlan: lane stride smaller than lane count");
    const bool inverse = dir == FftDirection::Inverse;
    thread_local std::vector<Complex> work;
    const std::size_t block = n_ * lanes;
    work.resize(2 * block + max_factor_ * lanes);
    Complex* in = work.data();
    Complex* out = in + block;
    for (std::size_t j = 0; j < n_; ++j) std::copy(data + j * stride, data + j * stride + lanes, in + j * lanes);
    recurse(in, 1, out, n_, 0, lanes, inverse, out + block);
    const double scale = inverse ? 1.0 / static_cast<double>(n_) : 1.0;
    for (std::size_t j = 0; j < n_; ++j) {
        const Complex* src = out + j * lanes;
        Complex* dst = data + j * stride;
        for (std::size_t l = 0; l < lanes; ++l) dst[l] = src[l] * scale;
    }
}

namespace {

// out[l] = a[l]·w over interleaved (re, im) pairs
inline void mul_lanes(const Complex* a, Complex w, Complex* out, std::size_t lanes) {
    const double* pa = reinterpret_cast<const double*>(a);
    double* po = reinterpret_cast<double*>(out);
    const double wr = w.real(), wi = w.imag();
    for (std::size_t l = 0; l < lanes; ++l) {
        const double re = pa[2 * l], im = pa[2 * l + 1];
        po[2 * l] = re * wr - im * wi;
        po[2 * l + 1] = re * wi + im * wr;
    }
}

// acc[l] += a[l]·w
inline void fma_lanes(const Complex* a, Complex w, Complex* acc, std::size_t lanes) {
    const double* pa = reinterpret_cast<const double*>(a);
    double* po = reinterpret_cast<double*>(acc);
    const double wr = w.real(), wi = w.imag();
    for (std::size_t l = 0; l < lanes; ++l) {
        const double re = pa[2 * l], im = pa[2 * l + 1];
        po[2 * l] += re * wr - im * wi;
        po[2 * l + 1] += re * wi + im * wr;
    }
}

}  // namespace

// Decimation in time: split n = p·m on the current factor p, transform the p
// interleaved subsequences into consecutive blocks of `out`, then combine each
// column {k, k+m, ...} with a p-point DFT after twiddling. Every element is a
// run of `lanes` values.
void FftPlan::recurse(const Complex* in, std::size_t stride, Complex* out, std::size_t n, std::size_t level,
                      std::size_t lanes, bool inverse, Complex* tmp) const {
    if (n == 1) {
        std::copy(in, in + lanes, out);
        return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t r = 0; r < p; ++r) {
        recurse(in + r * stride * lanes, stride * p, out + r * m * lanes, m, level + 1, lanes, inverse, tmp);
    }

    const std::size_t step = n_ / n;
    const std::size_t p_step = n_ / p;
    auto tw = [&](std::size_t k) { return inverse ? std::conj(twiddles_[k % n_]) : twiddles_[k % n_]; };

    if (p == 2) {
        double* o = reinterpret_cast<double*>(out);
        for (std::size_t k = 0; k < m; ++k) {
            const Complex w = tw(k * step);
            const double wr = w.real(), wi = w.imag();
            double* a = o + 2 * k * lanes;
            double* b = o + 2 * (k + m) * lanes;
            for (std::size_t l = 0; l < lanes; ++l) {
                const double br = b[2 * l] * wr - b[2 * l + 1] * wi;
                const double bi = b[2 * l] * wi + b[2 * l + 1] * wr;
                const double ar = a[2 * l], ai = a[2 * l + 1];
                a[2 * l] = ar + br;
                a[2 * l + 1] = ai + bi;
                b[2 * l] = ar - br;
                b[2 * l + 1] = ai - bi;
            }
        }
        return;
    }
    if (p == 4) {
        // multiplication by ∓i for the forward/inverse quarter turn
        const double sgn = inverse ? 1.0 : -1.0;
        double* o = reinterpret_cast<double*>(out);
        for (std::size_t k = 0; k < m; ++k) {
            const Complex w1 = tw(k * step), w2 = tw(2 * k * step), w3 = tw(3 * k * step);
            double* x0 = o + 2 * k * lanes;
            double* x1 = o + 2 * (k + m) * lanes;
            double* x2 = o + 2 * (k + 2 * m) * lanes;
            double* x3 = o + 2 * (k + 3 * m) * lanes;
            for (std::size_t l = 0; l < lanes; ++l) {
                const double a0r = x0[2 * l], a0i = x0[2 * l + 1];
                const double a1r = x1[2 * l] * w1.real() - x1[2 * l + 1] * w1.imag();
                const double a1i = x1[2 * l] * w1.imag() + x1[2 * l + 1] * w1.real();
                const double a2r = x2[2 * l] * w2.real() - x2[2 * l + 1] * w2.imag();
                const double a2i = x2[2 * l] * w2.imag() + x2[2 * l + 1] * w2.real();
                const double a3r = x3[2 * l] * w3.real() - x3[2 * l + 1] * w3.imag();
                const double a3i = x3[2 * l] * w3.imag() + x3[2 * l + 1] * w3.real();
                const double s02r = a0r + a2r, s02i = a0i + a2i;
                const double d02r = a0r - a2r, d02i = a0i - a2i;
                const double s13r = a1r + a3r, s13i = a1i + a3i;
                // (a1 - a3)·(sgn·i)
                const double d13r = -sgn * (a1i - a3i), d13i = sgn * (a1r - a3r);
                x0[2 * l] = s02r + s13r;
                x0[2 * l + 1] = s02i + s13i;
                x1[2 * l] = d02r + d13r;
                x1[2 * l + 1] = d02i + d13i;
                x2[2 * l] = s02r - s13r;
                x2[2 * l + 1] = s02i - s13i;
                x3[2 * l] = d02r - d13r;
                x3[2 * l + 1] = d02i - d13i;
            }
        }
        return;
    }
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t r = 0; r < p; ++r) mul_lanes(out + (r * m + k) * lanes, tw(r * k * step), tmp + r * lanes, lanes);
        for (std::size_t q = 0; q < p; ++q) {
            Complex* dst = out + (k + q * m) * lanes;
            std::copy(tmp, tmp + lanes, dst);
            for (std::size_t r = 1; r < p; ++r) fma_lanes(tmp + r * lanes, tw(((r * q) % p) * p_step), dst, lanes);
        }
    }
}

const FftPlan& fft_plan(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> plans;
    auto& slot = plans[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

ComplexTensor fft_1d(const ComplexTensor& signal, FftDirection dir) {
    require_signal(signal, "fft_1d");
    ComplexTensor out = signal;
    fft_plan(signal.size()).execute(out.raw(), dir);
    return out;
}

ComplexTensor fft2(const ComplexTensor& x, FftDirection dir) {
    if (x.rank() != 4) throw ShapeError("fft2: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    ComplexTensor out = x;
    if (out.empty()) return out;
    const FftPlan& row_plan = fft_plan(w);
    const FftPlan& col_plan = fft_plan(h);
    for (std::size_t n = 0; n < b * h; ++n) row_plan.execute_lanes(out.raw() + n * w * c, c, c, dir);
    for (std::size_t n = 0; n < b; ++n) col_plan.execute_lanes(out.raw() + n * h * w * c, w * c, w * c, dir);
    return out;
}

SpectralMap rfft2(const FeatureMap& x) {
    if (x.rank() != 4) throw ShapeError("rfft2: expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h == 0 || w == 0) throw ArgumentError("rfft2: empty spatial extent");
    const std::size_t wh = half_width(w);
    SpectralMap s{ComplexTensor({b, h, wh, c}), w};
    const FftPlan& row_plan = fft_plan(w);
    std::vector<Complex> row(w * c);
    for (std::size_t n = 0; n < b * h; ++n) {
        const double* src = x.raw() + n * w * c;
        for (std::size_t i = 0; i < w * c; ++i) row[i] = Complex(src[i], 0.0);
        row_plan.execute_lanes(row.data(), c, c, FftDirection::Forward);
        std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(wh * c), s.data.raw() + n * wh * c);
    }
    const FftPlan& col_plan = fft_plan(h);
    for (std::size_t n = 0; n < b; ++n) {
        col_plan.execute_lanes(s.data.raw() + n * h * wh * c, wh * c, wh * c, FftDirection::Forward);
    }
    return s;
}

FeatureMap irfft2(const SpectralMap& s) {
    if (s.data.rank() != 4) {
        throw ShapeError("irfft2: expected [B,H,W/2+1,C], got " + shape_to_string(s.data.shape()));
    }
    const std::size_t b = s.data.dim(0), h = s.data.dim(1), wh = s.data.dim(2), c = s.data.dim(3);
    const std::size_t w = s.original_width;
    if (w == 0 || half_width(w) != wh) {
        throw ShapeError("irfft2: original width " + std::to_string(w) +
                         " inconsistent with spectrum " + shape_to_string(s.data.shape()));
    }
    ComplexTensor cols = s.data;
    const FftPlan& col_plan = fft_plan(h);
    for (std::size_t n = 0; n < b; ++n) {
        col_plan.execute_lanes(cols.raw() + n * h * wh * c, wh * c, wh * c, FftDirection::Inverse);
    }

    // After the column inverse, the dropped columns are conj of their mirrors
    // within each row, G(m, W-v) = conj G(m, v).
    FeatureMap out({b, h, w, c});
    const FftPlan& row_plan = fft_plan(w);
    std::vector<Complex> row(w * c);
    for (std::size_t n = 0; n < b * h; ++n) {
        const Complex* src = cols.raw() + n * wh * c;
        std::copy(src, src + wh * c, row.begin());
        for (std::size_t j = wh; j < w; ++j) {
            for (std::size_t k = 0; k < c; ++k) row[j * c + k] = std::conj(src[(w - j) * c + k]);
        }
        row_plan.execute_lanes(row.data(), c, c, FftDirection::Inverse);
        double* dst = out.raw() + n * w * c;
        for (std::size_t i = 0; i < w * c; ++i) dst[i] = row[i].real();
    }
    return out;
}

FilterWeights FilterWeights::constant(std::size_t h, std::size_t w, std::size_t c, Complex value) {
    return FilterWeights{ComplexTensor({h, half_width(w), c}, value)};
}

namespace {

void check_filter_shape(const FeatureMap& x, const FilterWeights& w, const char* what) {
    if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected [B,H,W,C], got " + shape_to_string(x.shape()));
    const Shape expected{x.dim(1), half_width(x.dim(2)), x.dim(3)};
    if (w.data.shape() != expected) {
        throw ShapeError(std::string(what) + ": filter weights " + shape_to_string(w.data.shape()) +
                         " do not match feature map " + shape_to_string(x.shape()) +
                         " (expected " + shape_to_string(expected) + ")");
    }
}

// Multiplies every sample of a [B,H,Wh,C] spectrum by a [H,Wh,C] weight.
void apply_weights(ComplexTensor& spec, const ComplexTensor& weights, bool conjugate) {
    const std::size_t per_sample = weights.size();
    const std::size_t b = spec.size() / per_sample;
    for (std::size_t n = 0; n < b; ++n) {
        Complex* s = spec.raw() + n * per_sample;
        for (std::size_t i = 0; i < per_sample; ++i)
            s[i] *= conjugate ? std::conj(weights[i]) : weights[i];
    }
}

}  // namespace

FeatureMap filter_enhance_forward(const FeatureMap& x, const FilterWeights& w, FilterCache* cache) {
    check_filter_shape(x, w, "filter_enhance_forward");
    SpectralMap spec = rfft2(x);
    if (cache) cache->spectrum = spec;
    apply_weights(spec.data, w.data, false);
    return irfft2(spec);
}

// With G = rfft2(grad_y):
//   grad_x = irfft2(conj(W) ⊙ G)
//   grad_W = Σ_b m_v/(H·W) · G ⊙ conj(X)
// where m_v = 1 on the self-conjugate columns (v = 0, and v = W/2 for even W)
// and 2 elsewhere, since every other retained bin also stands for its mirror.
FilterGrads filter_enhance_backward(const FeatureMap& x, const FilterWeights& w,
                                    const FeatureMap& grad_y, const FilterCache* cache) {
    check_filter_shape(x, w, "filter_enhance_backward");
    if (grad_y.shape() != x.shape()) {
        throw ShapeError("filter_enhance_backward: grad " + shape_to_string(grad_y.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    }
    const std::size_t b = x.dim(0), h = x.dim(1), width = x.dim(2), c = x.dim(3);
    const std::size_t wh = half_width(width);

    SpectralMap g = rfft2(grad_y);
    SpectralMap local;
    const SpectralMap* xs = cache ? &cache->spectrum : nullptr;
    if (!xs || xs->data.shape() != g.data.shape()) {
        local = rfft2(x);
        xs = &local;
    }

    FilterGrads out;
    out.w = ComplexTensor(w.data.shape());
    const double inv_hw = 1.0 / static_cast<double>(h * width);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t u = 0; u < h; ++u) {
            for (std::size_t v = 0; v < wh; ++v) {
                const bool self_conjugate = v == 0 || (width % 2 == 0 && v == width / 2);
                const double mult = (self_conjugate ? 1.0 : 2.0) * inv_hw;
                const std::size_t base = ((n * h + u) * wh + v) * c;
                const std::size_t wbase = (u * wh + v) * c;
                for (std::size_t k = 0; k < c; ++k)
                    out.w[wbase + k] += mult * g.data[base + k] * std::conj(xs->data[base + k]);
            }
        }
    }
    apply_weights(g.data, w.data, true);
    out.x = irfft2(g);
    return out;
}

}  // namespace fwnet
