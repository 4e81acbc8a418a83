// Channel gating: ECA (length-3 convolution across channel means) and the
// squeeze-and-excitation alternative.

#pragma once

#include "fwnet/tensor.hpp"

namespace fwnet {

struct EcaParams {
    RealTensor kernel = RealTensor({3});  // taps applied to channels c−1, c, c+1
};

struct EcaCache {
    RealTensor pooled;  // [B,C]
    RealTensor gate;    // [B,C] sigmoid output
};

FeatureMap eca_forward(const FeatureMap& x, const EcaParams& p, EcaCache* cache = nullptr);

struct EcaGrads {
    FeatureMap x;
    RealTensor kernel;
};

EcaGrads eca_backward(const FeatureMap& x, const EcaParams& p, const FeatureMap& grad_y,
                      const EcaCache* cache = nullptr);

inline constexpr std::size_t kSeReduction = 16;

struct SeParams {
    RealTensor w1;  // [C, C/r]
    RealTensor b1;  // [C/r]
    RealTensor w2;  // [C/r, C]
    RealTensor b2;  // [C]
    std::size_t reduction = kSeReduction;

    static SeParams zeros(std::size_t channels, std::size_t reduction = kSeReduction);
};

struct SeCache {
    RealTensor pooled;  // [B,C]
    RealTensor hidden;  // [B,C/r] pre-activation
    RealTensor act;     // [B,C/r]
    RealTensor gate;    // [B,C]
};

FeatureMap se_forward(const FeatureMap& x, const SeParams& p, SeCache* cache = nullptr);

struct SeGrads {
    FeatureMap x;
    SeParams params;
};

SeGrads se_backward(const FeatureMap& x, const SeParams& p, const FeatureMap& grad_y,
                    const SeCache* cache = nullptr);

// Accumulating forms for the model's reverse pass.
FeatureMap eca_backward_accumulate(const FeatureMap& x, const EcaParams& p, const EcaCache& cache,
                                   const FeatureMap& grad_y, EcaParams& grads);
FeatureMap se_backward_accumulate(const FeatureMap& x, const SeParams& p, const SeCache& cache,
                                  const FeatureMap& grad_y, SeParams& grads);

}  // namespace fwnet
