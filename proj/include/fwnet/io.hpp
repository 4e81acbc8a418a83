// On-disk formats: tensor files, checkpoints, binary PGM and small CSV helpers.
//
// Tensor file   "FWT1" | u32 dtype (1 = f32) | u32 ndim | ndim × u64 dims | f32 payload
// Checkpoint    "FWCK" | u32 length + config text | records until end of file,
//               each u32 name length | name | tensor file body
// All integers and floats are little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fwnet/model.hpp"
#include "fwnet/tensor.hpp"

namespace fwnet {

inline constexpr std::uint32_t kDtypeF32 = 1;

void write_tensor(std::ostream& os, const RealTensor& t);
RealTensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const RealTensor& t);
RealTensor load_tensor(const std::filesystem::path& path);

/// Parameters are rounded to f32 on save.
void write_checkpoint(std::ostream& os, const FwNetModel& model);
FwNetModel read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const FwNetModel& model);
FwNetModel load_checkpoint(const std::filesystem::path& path);

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Splits CSV text into rows of fields (no quoting), skipping blank lines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace fwnet
