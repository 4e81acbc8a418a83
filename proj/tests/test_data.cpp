#include <doctest.h>

#include <filesystem>

#include "fwnet/data.hpp"
#include "fwnet/io.hpp"
#include "fwnet/spectral.hpp"

using namespace fwnet;

TEST_SUITE("data") {

TEST_CASE("class frequencies") {
    const auto f0 = grating_frequency(0, 56), f1 = grating_frequency(1, 56), f2 = grating_frequency(2, 56);
    CHECK(f0.ky == 0);
    CHECK(f0.kx == 4);
    CHECK(f1.ky == 4);
    CHECK(f1.kx == 0);
    CHECK(f2.kx == 8);
    CHECK_THROWS_AS(grating_frequency(12, 56), ArgumentError);
}

TEST_CASE("each class peaks at its generating bin") {
    for (std::size_t cls = 0; cls < 4; ++cls) {
        const RealTensor img = make_grating(cls, 56, image_seed(9, cls));
        const SpectralMap s = rfft2(img.reshaped({1, 56, 56, 3}));
        const auto f = grating_frequency(cls, 56);
        std::size_t best = 0;
        double best_energy = -1.0;
        for (std::size_t u = 0; u < 56; ++u)
            for (std::size_t v = 0; v < 29; ++v) {
                const double e = std::norm(s.data.at(0, u, v, 0));
                if (e > best_energy) {
                    best_energy = e;
                    best = u * 29 + v;
                }
            }
        CAPTURE(cls);
        // a grating along y sits at (k, 0) or its mirror (56 − k, 0)
        const bool at_bin = best == f.ky * 29 + f.kx || (f.ky > 0 && best == (56 - f.ky) * 29 + f.kx);
        CHECK(at_bin);
    }
}

TEST_CASE("noise level and channel replication") {
    const RealTensor clean = make_grating(0, 56, 5, 0.0);
    const RealTensor noisy = make_grating(0, 56, 5, 0.1);
    double var = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) var += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
    CHECK(std::sqrt(var / static_cast<double>(clean.size())) == doctest::Approx(0.1).epsilon(0.1));
    for (std::size_t p = 0; p < 56 * 56; ++p) {
        CHECK(noisy[p * 3] == noisy[p * 3 + 1]);
        CHECK(noisy[p * 3] == noisy[p * 3 + 2]);
    }
}

TEST_CASE("datasets are deterministic and written with labels") {
    SynthOptions opt;
    opt.per_class = 3;
    opt.seed = 7;
    const Dataset a = make_dataset(opt), b = make_dataset(opt);
    CHECK(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.images[i] == b.images[i]);
        CHECK(a.labels[i] == i % 4);
    }
    opt.seed = 8;
    CHECK_FALSE(make_dataset(opt).images[0] == a.images[0]);

    const auto dir = std::filesystem::temp_directory_path() / "fwnet_test_data";
    std::filesystem::remove_all(dir);
    write_dataset(dir, a);
    const auto rows = parse_csv(read_text_file(dir / "labels.csv"));
    CHECK(rows.front() == std::vector<std::string>{"filename", "label"});
    CHECK(rows.size() - 1 == 12);
    const Dataset back = load_dataset(dir);
    CHECK(back.size() == 12);
    CHECK(back.labels == a.labels);
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t k = 0; k < a.images[i].size(); ++k)
            CHECK(back.images[i][k] == static_cast<double>(static_cast<float>(a.images[i][k])));

    const auto dir2 = std::filesystem::temp_directory_path() / "fwnet_test_data2";
    std::filesystem::remove_all(dir2);
    write_dataset(dir2, a);
    for (const auto& name : a.names) CHECK(read_text_file(dir / name) == read_text_file(dir2 / name));

    CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
    CHECK_THROWS_AS(write_dataset("/proc/fwnet_cannot_write", a), IoError);
}

TEST_CASE("stacked batches") {
    SynthOptions opt;
    opt.per_class = 1;
    opt.size = 20;
    const Dataset d = make_dataset(opt);
    const RealTensor b = stack_batch(d, {2, 0});
    CHECK(b.shape() == Shape{2, 20, 20, 3});
    CHECK(b[0] == d.images[2][0]);
    CHECK(b[20 * 20 * 3] == d.images[0][0]);
}

}
