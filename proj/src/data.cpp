#include "fwnet/data.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "fwnet/io.hpp"

namespace fwnet {

GratingFrequency grating_frequency(std::size_t cls, std::size_t size) {
    const std::size_t k = 4 * (1 + cls / 2);
    if (2 * k >= size) {
        throw ArgumentError("class " + std::to_string(cls) + " needs " + std::to_string(k) +
                            " cycles, above the Nyquist limit of a " + std::to_string(size) + "-pixel image");
    }
    return cls % 2 == 0 ? GratingFrequency{0, k} : GratingFrequency{k, 0};
}

std::uint64_t image_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finaliser over the pair
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

RealTensor make_grating(std::size_t cls, std::size_t size, std::uint64_t seed, double noise) {
    const auto f = grating_frequency(cls, size);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise_dist(0.0, noise);
    const double phase = phase_dist(rng);
    const double step = 2.0 * std::numbers::pi / static_cast<double>(size);

    RealTensor img({size, size, 3});
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double arg = step * static_cast<double>(f.ky * y + f.kx * x) + phase;
            const double v = std::cos(arg) + (noise > 0.0 ? noise_dist(rng) : 0.0);
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    }
    return img;
}

Dataset make_dataset(const SynthOptions& opt) {
    if (opt.classes == 0 || opt.per_class == 0) throw ArgumentError("synthetic dataset needs classes and per-class > 0");
    if (opt.size == 0) throw ArgumentError("image size must be positive");
    for (std::size_t c = 0; c < opt.classes; ++c) grating_frequency(c, opt.size);
    Dataset d;
    const std::size_t n = opt.classes * opt.per_class;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % opt.classes;
        d.images.push_back(make_grating(label, opt.size, image_seed(opt.seed, i), opt.noise));
        d.labels.push_back(label);
        char name[32];
        std::snprintf(name, sizeof name, "img_%06zu.fwt", i);
        d.names.emplace_back(name);
    }
    return d;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
    std::ostringstream csv;
    csv << "filename,label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        save_tensor(dir / data.names[i], data.images[i]);
        csv << data.names[i] << ',' << data.labels[i] << '\n';
    }
    write_text_file(dir / "labels.csv", csv.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto labels_path = dir / "labels.csv";
    if (!std::filesystem::exists(labels_path)) throw IoError("no labels.csv in " + dir.string());
    auto rows = parse_csv(read_text_file(labels_path));
    Dataset d;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (r == 0 && !row.empty() && row[0] == "filename") continue;
        if (row.size() != 2) throw IoError("labels.csv line " + std::to_string(r + 1) + ": expected filename,label");
        std::size_t label = 0;
        try {
            std::size_t used = 0;
            label = std::stoul(row[1], &used);
            if (used != row[1].size()) throw std::invalid_argument(row[1]);
        } catch (const std::exception&) {
            throw IoError("labels.csv line " + std::to_string(r + 1) + ": bad label '" + row[1] + "'");
        }
        RealTensor img = load_tensor(dir / row[0]);
        if (img.rank() != 3 || img.dim(0) != img.dim(1)) {
            throw ShapeError(row[0] + ": expected a square [size,size,channels] image, got " +
                             shape_to_string(img.shape()));
        }
        if (!d.images.empty() && img.shape() != d.images.front().shape()) {
            throw ShapeError(row[0] + ": shape " + shape_to_string(img.shape()) + " differs from " +
                             shape_to_string(d.images.front().shape()));
        }
        d.images.push_back(std::move(img));
        d.labels.push_back(label);
        d.names.push_back(row[0]);
    }
    if (d.images.empty()) throw IoError("dataset in " + dir.string() + " is empty");
    return d;
}

RealTensor stack_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ArgumentError("stack_batch: empty batch");
    const Shape& s = data.images.at(indices.front()).shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    RealTensor batch(shape);
    const std::size_t per = shape_numel(s);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& img = data.images.at(indices[b]);
        std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return batch;
}

}  // namespace fwnet
