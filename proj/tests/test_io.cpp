#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "fwnet/io.hpp"
#include "oracles.hpp"

using namespace fwnet;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fwnet_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.patch = 2;
    cfg.embed_dim = 8;
    cfg.depths = {2, 2};
    cfg.window = 2;
    cfg.num_classes = 3;
    cfg.image_size = 8;
    return cfg;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("tensor file layout is bit exact") {
    std::ostringstream os;
    write_tensor(os, RealTensor({2}, std::vector<double>{1.0, -2.0}));
    const std::string b = os.str();
    REQUIRE(b.size() == 4 + 4 + 4 + 8 + 2 * 4);
    CHECK(b.substr(0, 4) == "FWT1");
    CHECK(b.substr(4, 4) == std::string("\x01\x00\x00\x00", 4));
    CHECK(b.substr(8, 4) == std::string("\x01\x00\x00\x00", 4));
    CHECK(b.substr(12, 8) == std::string("\x02\x00\x00\x00\x00\x00\x00\x00", 8));
    CHECK(b.substr(20, 4) == std::string("\x00\x00\x80\x3f", 4));  // 1.0f
    CHECK(b.substr(24, 4) == std::string("\x00\x00\x00\xc0", 4));  // -2.0f
}

TEST_CASE("tensor round trip at f32 precision") {
    std::mt19937_64 rng(1);
    const RealTensor t = oracle::random_tensor({3, 4, 5}, rng);
    const auto dir = scratch_dir("tensor");
    save_tensor(dir / "t.fwt", t);
    const RealTensor back = load_tensor(dir / "t.fwt");
    CHECK(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
    const RealTensor scalar = RealTensor({}, std::vector<double>{2.5});
    save_tensor(dir / "s.fwt", scalar);
    CHECK(load_tensor(dir / "s.fwt") == scalar);
}

TEST_CASE("tensor loading rejects bad magic, dtype and truncation") {
    std::ostringstream os;
    write_tensor(os, RealTensor({3}, 1.0));
    std::string good = os.str();

    std::string magic = good;
    magic[0] = 'X';
    std::istringstream m(magic);
    CHECK_THROWS_AS(read_tensor(m), IoError);

    std::string dtype = good;
    dtype[4] = 2;
    std::istringstream d(dtype);
    CHECK_THROWS_AS(read_tensor(d), IoError);

    std::istringstream t(good.substr(0, good.size() - 2));
    CHECK_THROWS_AS(read_tensor(t), IoError);
    CHECK_THROWS_AS(load_tensor("/nonexistent/x.fwt"), IoError);
}

TEST_CASE("checkpoint save, load, save is byte identical") {
    const FwNetModel m = init_params(small_config(), 3);
    std::ostringstream a;
    write_checkpoint(a, m);
    std::istringstream in(a.str());
    const FwNetModel loaded = read_checkpoint(in);
    CHECK(loaded.config == m.config);
    std::ostringstream b;
    write_checkpoint(b, loaded);
    CHECK(a.str() == b.str());
    CHECK(a.str().substr(0, 4) == "FWCK");

    const auto pm = parameters(m), pl = parameters(loaded);
    REQUIRE(pm.size() == pl.size());
    for (std::size_t i = 0; i < pm.size(); ++i)
        for (std::size_t k = 0; k < pm[i].values.size(); ++k)
            CHECK(pl[i].values[k] == static_cast<double>(static_cast<float>(pm[i].values[k])));

    const auto dir = scratch_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", m);
    const FwNetModel f = load_checkpoint(dir / "m.ckpt");
    CHECK(model_forward(RealTensor({1, 8, 8, 3}, 0.5), f) == model_forward(RealTensor({1, 8, 8, 3}, 0.5), loaded));
}

TEST_CASE("checkpoint corruption is detected") {
    const FwNetModel m = init_params(small_config(), 4);
    std::ostringstream os;
    write_checkpoint(os, m);
    const std::string good = os.str();

    std::string magic = good;
    magic[2] = 'Z';
    std::istringstream a(magic);
    CHECK_THROWS_AS(read_checkpoint(a), IoError);

    std::istringstream b(good.substr(0, good.size() - 7));
    CHECK_THROWS_AS(read_checkpoint(b), IoError);

    std::istringstream c(good + good.substr(good.size() - 200));
    CHECK_THROWS(read_checkpoint(c));

    // drop the final record: a missing tensor
    const std::string name = "head.fc.bias";
    const auto pos = good.rfind(name);
    REQUIRE(pos != std::string::npos);
    std::istringstream d(good.substr(0, pos - 4));
    CHECK_THROWS_AS(read_checkpoint(d), IoError);

    const auto dir = scratch_dir("corrupt");
    write_text_file(dir / "bad.ckpt", magic);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
}

TEST_CASE("pgm round trip") {
    const auto dir = scratch_dir("pgm");
    GrayImage img{3, 2, {0, 10, 20, 255, 128, 7}};
    write_pgm(dir / "a.pgm", img);
    const std::string raw = read_text_file(dir / "a.pgm");
    CHECK(raw.rfind("P5\n3 2\n255\n", 0) == 0);
    const GrayImage back = read_pgm(dir / "a.pgm");
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.pixels == img.pixels);
    write_text_file(dir / "b.pgm", "P2\n1 1\n255\n0\n");
    CHECK_THROWS_AS(read_pgm(dir / "b.pgm"), IoError);
    CHECK_THROWS_AS(write_pgm(dir / "c.pgm", GrayImage{2, 2, {1}}), ShapeError);
}

TEST_CASE("csv parsing") {
    const auto rows = parse_csv("a,b\r\n\n1,2\n3,\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"a", "b"});
    CHECK(rows[2] == std::vector<std::string>{"3", ""});
}

}
