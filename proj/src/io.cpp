#include "fwnet/io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <map>
#include <sstream>

namespace fwnet {

namespace {

constexpr std::array<char, 4> kTensorMagic{'F', 'W', 'T', '1'};
constexpr std::array<char, 4> kCheckpointMagic{'F', 'W', 'C', 'K'};
constexpr std::uint32_t kMaxNdim = 16;

template <typename U>
void put(std::ostream& os, U v) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(bytes, sizeof(U));
}

void need(std::istream& is, const char* what) {
    if (!is) throw IoError(std::string("truncated input while reading ") + what);
}

template <typename U>
U get(std::istream& is, const char* what) {
    unsigned char bytes[sizeof(U)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(U));
    need(is, what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

void put_magic(std::ostream& os, const std::array<char, 4>& magic) { os.write(magic.data(), 4); }

void expect_magic(std::istream& is, const std::array<char, 4>& magic, const char* what) {
    std::array<char, 4> got{};
    is.read(got.data(), 4);
    if (!is || got != magic) {
        throw IoError(std::string("bad magic: not a ") + what + " (expected \"" + std::string(magic.data(), 4) + "\")");
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return is;
}

void finish(std::ostream& os, const std::filesystem::path& path) {
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_tensor(std::ostream& os, const RealTensor& t) {
    put_magic(os, kTensorMagic);
    put<std::uint32_t>(os, kDtypeF32);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    for (double v : t.data()) put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

RealTensor read_tensor(std::istream& is) {
    expect_magic(is, kTensorMagic, "tensor file");
    const auto dtype = get<std::uint32_t>(is, "dtype");
    if (dtype != kDtypeF32) throw IoError("unsupported tensor dtype code " + std::to_string(dtype));
    const auto ndim = get<std::uint32_t>(is, "ndim");
    if (ndim > kMaxNdim) throw IoError("tensor rank " + std::to_string(ndim) + " out of range");
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::uint64_t>(is, "dims");
    RealTensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<float>(get<std::uint32_t>(is, "payload"));
    return t;
}

void save_tensor(const std::filesystem::path& path, const RealTensor& t) {
    auto os = open_out(path);
    write_tensor(os, t);
    finish(os, path);
}

RealTensor load_tensor(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_tensor(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_checkpoint(std::ostream& os, const FwNetModel& model) {
    put_magic(os, kCheckpointMagic);
    const std::string config = model.config.to_text();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(config.size()));
    os.write(config.data(), static_cast<std::streamsize>(config.size()));
    for (const auto& p : parameters(model)) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        RealTensor t(p.shape);
        std::copy(p.values.begin(), p.values.end(), t.data().begin());
        write_tensor(os, t);
    }
}

FwNetModel read_checkpoint(std::istream& is) {
    expect_magic(is, kCheckpointMagic, "checkpoint");
    const auto config_len = get<std::uint32_t>(is, "config length");
    std::string config_text(config_len, '\0');
    is.read(config_text.data(), config_len);
    need(is, "config block");
    FwNetModel model = zeros_like(ModelConfig::from_text(config_text));

    auto params = parameters(model);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < params.size(); ++i) index.emplace(params[i].name, i);
    std::vector<bool> seen(params.size(), false);

    while (is.peek() != std::char_traits<char>::eof()) {
        const auto name_len = get<std::uint32_t>(is, "record name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        need(is, "record name");
        const auto it = index.find(name);
        if (it == index.end()) throw IoError("checkpoint: unknown tensor '" + name + "'");
        if (seen[it->second]) throw IoError("checkpoint: duplicate tensor '" + name + "'");
        seen[it->second] = true;
        RealTensor t = read_tensor(is);
        auto& p = params[it->second];
        if (t.shape() != p.shape) {
            throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_to_string(t.shape()) + ", model expects " +
                          shape_to_string(p.shape));
        }
        std::copy(t.data().begin(), t.data().end(), p.values.begin());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!seen[i]) throw IoError("checkpoint: missing tensor '" + params[i].name + "'");
    }
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const FwNetModel& model) {
    auto os = open_out(path);
    write_checkpoint(os, model);
    finish(os, path);
}

FwNetModel load_checkpoint(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_checkpoint(is);
    } catch (const Error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    if (image.pixels.size() != image.width * image.height) {
        throw ShapeError("write_pgm: " + std::to_string(image.pixels.size()) + " pixels for " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    auto os = open_out(path);
    os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    finish(os, path);
}

GrayImage read_pgm(const std::filesystem::path& path) {
    auto is = open_in(path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError(path.string() + ": not a binary PGM");
    auto next_int = [&]() {
        is >> std::ws;
        while (is.peek() == '#') {
            std::string comment;
            std::getline(is, comment);
            is >> std::ws;
        }
        long long v = -1;
        is >> v;
        if (!is || v < 0) throw IoError(path.string() + ": malformed PGM header");
        return static_cast<std::size_t>(v);
    };
    GrayImage img;
    img.width = next_int();
    img.height = next_int();
    const std::size_t maxval = next_int();
    if (maxval != 255) throw IoError(path.string() + ": unsupported PGM maxval " + std::to_string(maxval));
    is.get();
    img.pixels.resize(img.width * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw IoError(path.string() + ": truncated PGM payload");
    return img;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    auto os = open_out(path);
    os << text;
    finish(os, path);
}

std::string read_text_file(const std::filesystem::path& path) {
    auto is = open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace fwnet
