#pragma once

#include <vector>

#include "franca/random.hpp"
#include "franca/tensor.hpp"

namespace franca {

struct CropConfig {
    std::size_t global_count = 2;
    std::size_t global_size = 64;
    std::size_t local_count = 4;
    std::size_t local_size = 32;
    double global_scale_min = 0.48;
    double global_scale_max = 1.0;
    double local_scale_min = 0.05;
    double local_scale_max = 0.48;
    double flip_prob = 0.5;
    double brightness = 0.2;  // additive offset drawn from [-b, b]
    double contrast = 0.2;    // factor drawn from [1 - c, 1 + c] around the crop mean

    void validate() const;
};

// Square source region in pixel units plus the photometric draw.
struct CropRecord {
    double top = 0.0;
    double left = 0.0;
    double side = 0.0;
    bool flipped = false;
    double brightness = 0.0;
    double contrast = 1.0;
};

struct CropSet {
    std::vector<Tensor> globals;  // [3, S_g, S_g]
    std::vector<Tensor> locals;   // [3, S_l, S_l]
    std::vector<CropRecord> global_records;
    std::vector<CropRecord> local_records;
};

// Bilinear sampling of the square region (top, left, side) of a [C, H, W]
// image onto an out x out grid (pixel-center alignment, edge clamping).
Tensor crop_resize(const Tensor& image, double top, double left, double side, std::size_t out);
Tensor resize_bilinear(const Tensor& image, std::size_t out);
Tensor hflip(const Tensor& image);
// x <- clamp((x - mean) * contrast + mean + brightness, 0, 1), mean over the whole crop.
Tensor color_jitter(const Tensor& image, double brightness, double contrast);

Tensor apply_crop(const Tensor& image, const CropRecord& record, std::size_t out);

CropSet multi_crop(const Tensor& image, const CropConfig& cfg, Rng& rng);

}  // namespace franca
