#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "franca/image_io.hpp"
#include "franca/tensor.hpp"

namespace franca {

inline constexpr std::array<const char*, 4> kShapeNames{"disc", "square", "triangle", "cross"};

// Class k has home quadrant k: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
struct ShapesConfig {
    std::size_t canvas = 64;
    std::size_t patch = 8;
    std::size_t classes = 4;  // first `classes` entries of kShapeNames
    std::size_t shapes_per_image = 1;
    double beta = 0.0;          // probability that a shape is placed in its class quadrant
    double color_jitter = 0.0;  // half-width of per-channel color perturbations
    std::uint64_t seed = 0;

    void validate() const;
};

struct ShapesDataset {
    std::size_t canvas = 0;
    std::size_t patch = 0;
    std::vector<Tensor> images;   // [3, canvas, canvas]
    std::vector<int> labels;      // shape class
    std::vector<int> quadrants;   // quadrant of the first shape's center
    std::vector<ByteMap> pixel_classes;  // 0 background, class + 1 on shape pixels
    std::vector<std::string> paths;      // relative image paths once written or loaded

    std::size_t size() const { return images.size(); }
    // Per-patch labels in patchify raster order.
    std::vector<int> patch_labels(std::size_t index) const;
};

int quadrant_of(double cy, double cx, std::size_t canvas);

// Image i draws from an independent stream derived from (seed, stream, i).
ShapesDataset generate_shapes(const ShapesConfig& cfg, std::size_t count, std::uint64_t stream = 0);

// Majority class of each p x p block; ties go to the smaller class id.
std::vector<int> patch_majority(const ByteMap& pixels, std::size_t patch);

// <dir>/images/<class>/<idx>.ppm, <dir>/masks/<idx>.pgm and <dir>/manifest.csv
// ("relative-path,label,quadrant"). Returns the written paths.
std::vector<std::filesystem::path> write_shapes_split(const std::filesystem::path& dir, ShapesDataset& ds);
ShapesDataset load_shapes_split(const std::filesystem::path& dir, std::size_t patch);

}  // namespace franca
