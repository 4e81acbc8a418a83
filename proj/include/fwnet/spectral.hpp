// Discrete Fourier transforms and the learnable frequency-domain filter layer.
//
// Forward transforms are unnormalised; inverses carry the 1/N (1/(H·W)) factor.
// Real 2D spectra keep only the non-negative width frequencies: a map of width W
// becomes floor(W/2)+1 columns, the rest being implied by F(-u,-v) = conj F(u,v).

#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "fwnet/tensor.hpp"

namespace fwnet {

enum class FftDirection { Forward, Inverse };

/// O(N²) reference transforms. Used as the oracle for the fast path.
ComplexTensor dft_1d_naive(const ComplexTensor& signal);
ComplexTensor idft_1d_naive(const ComplexTensor& spectrum);

/// Mixed-radix Cooley–Tukey plan for a fixed length. Prime factors are handled
/// by a direct DFT butterfly, so any N >= 1 is accepted.
class FftPlan {
public:
    explicit FftPlan(std::size_t n);

    std::size_t size() const noexcept { return n_; }
    const std::vector<std::size_t>& factors() const noexcept { return factors_; }

    /// Transforms `n` contiguous values in place. The inverse includes the 1/N scale.
    void execute(Complex* data, FftDirection dir) const;

    /// Transforms `lanes` interleaved sequences at once: element j of lane l is
    /// data[j·stride + l], with stride >= lanes.
    void execute_lanes(Complex* data, std::size_t stride, std::size_t lanes, FftDirection dir) const;

private:
    void recurse(const Complex* in, std::size_t stride, Complex* out, std::size_t n, std::size_t level,
                 std::size_t lanes, bool inverse, Complex* tmp) const;

    std::size_t n_;
    std::vector<std::size_t> factors_;
    std::vector<Complex> twiddles_;  // e^{-2πi k/N}
    std::size_t max_factor_ = 1;
};

/// Shared, thread-local plan for length n.
const FftPlan& fft_plan(std::size_t n);

ComplexTensor fft_1d(const ComplexTensor& signal, FftDirection dir);

/// Half spectrum of a real [B,H,W,C] map.
struct SpectralMap {
    ComplexTensor data;  // [B, H, W/2+1, C]
    std::size_t original_width = 0;
};

inline std::size_t half_width(std::size_t w) { return w / 2 + 1; }

SpectralMap rfft2(const FeatureMap& x);
FeatureMap irfft2(const SpectralMap& s);

/// Full (non-halved) 2D transform of every [H,W] plane of a [B,H,W,C] complex tensor.
ComplexTensor fft2(const ComplexTensor& x, FftDirection dir);

/// Learnable complex filter, one weight per retained frequency bin and channel.
struct FilterWeights {
    ComplexTensor data;  // [H, W/2+1, C]

    /// Filter for an H×W map with C channels, every weight equal to `value`.
    static FilterWeights constant(std::size_t h, std::size_t w, std::size_t c, Complex value);
};

struct FilterCache {
    SpectralMap spectrum;  // rfft2 of the forward input
};

/// y = irfft2(W ⊙ rfft2(x)), independently per sample and channel.
FeatureMap filter_enhance_forward(const FeatureMap& x, const FilterWeights& w,
                                  FilterCache* cache = nullptr);

struct FilterGrads {
    FeatureMap x;
    ComplexTensor w;  // ∂L/∂Re W + i·∂L/∂Im W
};

FilterGrads filter_enhance_backward(const FeatureMap& x, const FilterWeights& w,
                                    const FeatureMap& grad_y, const FilterCache* cache = nullptr);

}  // namespace fwnet
