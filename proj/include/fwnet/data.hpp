// Synthetic sinusoidal-grating classification data.
//
// Class c has orientation c % 2 (0: intensity varies along x, 1: along y) and
// k = 4·(1 + c/2) cycles across the image. Each image is
//   cos(2π·(ky·y + kx·x)/size + φ) + N(0, σ²)
// with a uniform random phase φ, replicated over three channels.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fwnet/tensor.hpp"

namespace fwnet {

struct GratingFrequency {
    std::size_t ky = 0;
    std::size_t kx = 0;
};

/// Integer frequency bin of class `cls`; throws if it reaches the Nyquist limit.
GratingFrequency grating_frequency(std::size_t cls, std::size_t size);

/// Per-image generator seed derived from the dataset seed and the image index.
std::uint64_t image_seed(std::uint64_t seed, std::uint64_t index);

/// One [size, size, 3] image.
RealTensor make_grating(std::size_t cls, std::size_t size, std::uint64_t seed, double noise = 0.1);

struct SynthOptions {
    std::size_t classes = 4;
    std::size_t per_class = 256;
    std::size_t size = 56;
    std::uint64_t seed = 0;
    double noise = 0.1;
};

struct Dataset {
    std::vector<RealTensor> images;  // each [size, size, 3]
    std::vector<std::size_t> labels;
    std::vector<std::string> names;

    std::size_t size() const { return labels.size(); }
};

/// Images interleave classes: index i has label i % classes.
Dataset make_dataset(const SynthOptions& opt);

/// Writes one tensor file per image plus labels.csv (header filename,label).
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

/// Stacks images[indices] into a [n, size, size, 3] batch.
RealTensor stack_batch(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace fwnet
