// Gradient-weighted class activation maps at any block output.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fwnet/io.hpp"
#include "fwnet/model.hpp"

namespace fwnet {

struct CamOptions {
    std::optional<std::size_t> target_class;  // defaults to the predicted class
    bool detach_head = false;                 // probe with a zero class-score gradient
};

struct CamResult {
    std::size_t target_class = 0;
    RealTensor raw;    // [h, w] rectified map at block resolution
    GrayImage image;   // min-max scaled to 0..255, nearest-upsampled to input size
};

/// `image` is one [H, W, in] sample or a [1, H, W, in] batch. Stage and block
/// are zero-based.
CamResult grad_cam(const FwNetModel& model, const RealTensor& image, std::size_t stage, std::size_t block,
                   const CamOptions& opt = {});

/// Fraction of pixels strictly above half of the map's maximum (0 for an all-zero map).
double response_area_fraction(const GrayImage& map);

}  // namespace fwnet
