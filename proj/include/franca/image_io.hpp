#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "franca/tensor.hpp"

namespace franca {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary "P6", maxval 255. Returns [3, H, W] with values byte / 255.
Tensor read_ppm(const std::filesystem::path& path);
Tensor decode_ppm(const std::string& bytes, const std::string& origin = "<memory>");
// Values are clamped to [0, 1] and rounded to the nearest byte.
void write_ppm(const std::filesystem::path& path, const Tensor& chw);

// Binary "P5" single-channel byte maps (used for ground-truth class maps).
struct ByteMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;
};
ByteMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const ByteMap& map);

struct ImageSet {
    std::vector<Tensor> images;            // [3, H, W] each
    std::vector<int> labels;               // index into class_names, -1 without subdirectories
    std::vector<std::string> class_names;  // sorted subdirectory names
    std::vector<std::string> paths;        // relative to the loaded root
};

// Every *.ppm below `root`, in sorted path order. A file inside a
// subdirectory takes the first path component as its class.
ImageSet load_ppm_dir(const std::filesystem::path& root);

}  // namespace franca
