// Non-overlapping window partitioning and windowed multi-head self-attention
// with a learned relative position bias. There is no shifted-window variant.

#pragma once

#include <cstdint>
#include <vector>

#include "fwnet/tensor.hpp"

namespace fwnet {

struct WindowGrid {
    RealTensor windows;      // [B·rows·cols, M², C]
    std::size_t rows = 0;    // windows per column of the source map
    std::size_t cols = 0;    // windows per row of the source map
    std::size_t window = 0;  // M
};

WindowGrid window_partition(const FeatureMap& x, std::size_t window);
FeatureMap window_reverse(const WindowGrid& g, std::size_t height, std::size_t width);

/// [M², M²] row-major table; entry (i, j) indexes the bias of token j seen from
/// token i: (Δrow + M − 1)·(2M − 1) + (Δcol + M − 1).
struct RelativeIndex {
    std::size_t window = 0;
    std::vector<std::uint32_t> index;

    std::uint32_t operator()(std::size_t i, std::size_t j) const {
        return index[i * window * window + j];
    }
};

RelativeIndex relative_position_index(std::size_t window);

struct AttentionParams {
    RealTensor w_qkv;       // [C, 3C]
    RealTensor b_qkv;       // [3C]
    RealTensor w_out;       // [C, C]
    RealTensor b_out;       // [C]
    RealTensor bias_table;  // [(2M−1)², heads]
    RelativeIndex rel_index;
    std::size_t heads = 1;

    /// Zero-initialised parameters.
    static AttentionParams zeros(std::size_t channels, std::size_t heads, std::size_t window);

    std::size_t channels() const { return w_out.dim(0); }
    std::size_t head_dim() const { return channels() / heads; }
    std::size_t window() const { return rel_index.window; }
};

struct WmsaCache {
    RealTensor input;    // [nW, T, C]
    RealTensor qkv;      // [nW, T, 3C]
    RealTensor attn;     // [nW, heads, T, T] softmax probabilities
    RealTensor context;  // [nW, T, C] heads concatenated, before the output projection
};

/// softmax(QKᵀ/√d + B)·V per window and head, heads concatenated, then projected.
WindowGrid wmsa_forward(const WindowGrid& g, const AttentionParams& p, WmsaCache* cache = nullptr);

struct WmsaGrads {
    WindowGrid input;
    AttentionParams params;  // gradient tensors share the parameter layout
};

WmsaGrads wmsa_backward(const WindowGrid& g, const AttentionParams& p, const WindowGrid& grad_out,
                        const WmsaCache* cache = nullptr);

/// Accumulating form used by the model: adds into `grads`, returns the window gradient.
RealTensor wmsa_backward_accumulate(const AttentionParams& p, const WmsaCache& cache,
                                    const RealTensor& grad_out, AttentionParams& grads);

}  // namespace fwnet
