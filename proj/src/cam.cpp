#include "fwnet/cam.hpp"

#include <algorithm>
#include <cmath>

namespace fwnet {

CamResult grad_cam(const FwNetModel& model, const RealTensor& image, std::size_t stage, std::size_t block,
                   const CamOptions& opt) {
    const auto& cfg = model.config;
    if (stage >= cfg.num_stages() || block >= cfg.depths[stage]) {
        throw ArgumentError("no block at stage " + std::to_string(stage) + ", block " + std::to_string(block) +
                            " (stages: " + std::to_string(cfg.num_stages()) + ")");
    }
    RealTensor batch = image;
    if (image.rank() == 3) {
        batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    } else if (image.rank() != 4 || image.dim(0) != 1) {
        throw ShapeError("grad_cam expects one image, got " + shape_to_string(image.shape()));
    }

    ForwardTrace trace;
    const RealTensor logits = model_forward(batch, model, &trace);
    const std::size_t classes = logits.dim(1);
    CamResult result;
    if (opt.target_class) {
        if (*opt.target_class >= classes) {
            throw ArgumentError("target class " + std::to_string(*opt.target_class) + " out of range");
        }
        result.target_class = *opt.target_class;
    } else {
        result.target_class = static_cast<std::size_t>(
            std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
    }

    RealTensor grad_logits({1, classes});
    if (!opt.detach_head) grad_logits[result.target_class] = 1.0;
    FwNetModel scratch = zeros_like(model);
    BlockOutputGrads block_grads;
    model_backward_from_logits(model, trace, grad_logits, scratch, &block_grads);

    const FeatureMap& act = trace.block_outputs[stage][block];
    const FeatureMap& grad = block_grads[stage][block];
    const std::size_t h = act.dim(1), w = act.dim(2), c = act.dim(3);
    const double inv_hw = 1.0 / static_cast<double>(h * w);

    std::vector<double> alpha(c, 0.0);
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t k = 0; k < c; ++k) alpha[k] += grad[p * c + k];
    }
    for (double& a : alpha) a *= inv_hw;

    result.raw = RealTensor({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += alpha[k] * act[p * c + k];
        result.raw[p] = std::max(s, 0.0);
    }

    const auto [lo_it, hi_it] = std::minmax_element(result.raw.data().begin(), result.raw.data().end());
    const double lo = *lo_it, hi = *hi_it;
    const std::size_t out_h = batch.dim(1), out_w = batch.dim(2);
    result.image.width = out_w;
    result.image.height = out_h;
    result.image.pixels.assign(out_h * out_w, 0);
    if (hi > lo) {
        for (std::size_t y = 0; y < out_h; ++y) {
            const std::size_t sy = y * h / out_h;
            for (std::size_t x = 0; x < out_w; ++x) {
                const std::size_t sx = x * w / out_w;
                const double v = (result.raw[sy * w + sx] - lo) / (hi - lo);
                result.image.pixels[y * out_w + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
            }
        }
    }
    return result;
}

double response_area_fraction(const GrayImage& map) {
    if (map.pixels.empty()) return 0.0;
    const std::uint8_t mx = *std::max_element(map.pixels.begin(), map.pixels.end());
    if (mx == 0) return 0.0;
    const double half = 0.5 * mx;
    const auto above = std::count_if(map.pixels.begin(), map.pixels.end(), [&](std::uint8_t v) { return v > half; });
    return static_cast<double>(above) / static_cast<double>(map.pixels.size());
}

}  // namespace fwnet
