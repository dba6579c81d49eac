#pragma once

#include <span>
#include <string>
#include <vector>

#include "franca/masking.hpp"
#include "franca/params.hpp"
#include "franca/random.hpp"
#include "franca/tensor.hpp"

namespace franca {

struct EncoderConfig {
    std::size_t image_size = 64;                  // global crop side
    std::vector<std::size_t> crop_sizes{64, 32};  // one positional table per side
    std::size_t patch_size = 8;
    std::size_t channels = 3;
    std::size_t embed_dim = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    double mlp_ratio = 2.0;
    double drop_path = 0.0;  // maximum stochastic-depth rate (last block)

    void validate() const;
    std::size_t grid(std::size_t crop) const { return crop / patch_size; }
    std::size_t patches(std::size_t crop) const { return grid(crop) * grid(crop); }
};

struct EncoderOutput {
    Tensor cls;      // [B, d]
    Tensor patches;  // [B, n, d]
    std::size_t rows = 0;
    std::size_t cols = 0;
};

// [B, C, H, W] -> [B, n, C*p*p]. Patches in raster order; within a patch the
// layout is (channel, dy, dx).
Tensor patchify(const Tensor& images, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t channels, std::size_t height,
                  std::size_t width);

// Registers every encoder parameter under "encoder.*".
void init_encoder(const EncoderConfig& cfg, ParamStore& params, Rng& rng);

// Name of the last linear layer (weight [d, d], bias [d]).
inline const std::string kEncoderOutWeight = "encoder.out.w";
inline const std::string kEncoderOutBias = "encoder.out.b";

// `masks` is empty (no masking), a single grid applied to every image, or one
// grid per image. Masked patch slots get the learned mask token before the
// positional embedding is added. `drop_rng` enables stochastic depth when the
// configured rate is positive.
EncoderOutput encode(const EncoderConfig& cfg, const ParamStore& params, const Tensor& images,
                     std::span<const MaskGrid> masks = {}, Rng* drop_rng = nullptr);

}  // namespace franca
