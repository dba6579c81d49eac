#include "franca/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "franca/ops.hpp"

namespace franca {

namespace {

Tensor random_matrix(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    const double std = gain * std::sqrt(2.0 / static_cast<double>(in + out));
    std::vector<double> v(in * out);
    for (auto& x : v) x = rng.normal() * std;
    round_to_precision(v);
    return Tensor({in, out}, std::move(v), true);
}

Tensor random_vector(std::size_t n, double std, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * std;
    round_to_precision(v);
    return Tensor({n}, std::move(v), true);
}

std::string block_name(std::size_t i, const char* leaf) { return "encoder.block." + std::to_string(i) + "." + leaf; }

}  // namespace

void EncoderConfig::validate() const {
    if (patch_size == 0 || embed_dim == 0 || heads == 0 || channels == 0)
        throw std::invalid_argument("encoder: patch size, width, heads and channels must be positive");
    if (embed_dim % heads != 0) throw std::invalid_argument("encoder: embed_dim must be divisible by heads");
    if (crop_sizes.empty()) throw std::invalid_argument("encoder: at least one crop size is required");
    if (std::find(crop_sizes.begin(), crop_sizes.end(), image_size) == crop_sizes.end())
        throw std::invalid_argument("encoder: image_size must be one of the crop sizes");
    for (auto s : crop_sizes) {
        if (s == 0 || s % patch_size != 0)
            throw std::invalid_argument("encoder: crop size " + std::to_string(s) + " not divisible by patch size " +
                                        std::to_string(patch_size));
    }
    if (!(mlp_ratio > 0.0)) throw std::invalid_argument("encoder: mlp_ratio must be positive");
    if (!(drop_path >= 0.0 && drop_path < 1.0)) throw std::invalid_argument("encoder: drop_path must lie in [0, 1)");
}

Tensor patchify(const Tensor& images, std::size_t p) {
    if (images.ndim() != 4) throw ShapeError("patchify: expected [B, C, H, W], got " + shape_str(images.shape()));
    const std::size_t batch = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(p));
    }
    const std::size_t gr = h / p, gc = w / p, len = ch * p * p;
    std::vector<double> v(batch * gr * gc * len);
    const auto src = images.data();
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t pr = 0; pr < gr; ++pr)
            for (std::size_t pc = 0; pc < gc; ++pc)
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            v[o++] = src[((b * ch + c) * h + pr * p + dy) * w + pc * p + dx];
    return Tensor({batch, gr * gc, len}, std::move(v));
}

Tensor unpatchify(const Tensor& patches, std::size_t p, std::size_t channels, std::size_t height, std::size_t width) {
    if (p == 0 || height % p != 0 || width % p != 0 || patches.ndim() != 3 ||
        patches.dim(1) != (height / p) * (width / p) || patches.dim(2) != channels * p * p) {
        throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) + " do not form " +
                         std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width));
    }
    const std::size_t batch = patches.dim(0), gc = width / p, gr = height / p;
    std::vector<double> v(batch * channels * height * width);
    const auto src = patches.data();
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t pr = 0; pr < gr; ++pr)
            for (std::size_t pc = 0; pc < gc; ++pc)
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            v[((b * channels + c) * height + pr * p + dy) * width + pc * p + dx] = src[o++];
    return Tensor({batch, channels, height, width}, std::move(v));
}

void init_encoder(const EncoderConfig& cfg, ParamStore& params, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim;
    const std::size_t hidden = static_cast<std::size_t>(std::llround(cfg.mlp_ratio * static_cast<double>(d)));
    const std::size_t patch_len = cfg.channels * cfg.patch_size * cfg.patch_size;

    params.add("encoder.patch.w", random_matrix(patch_len, d, rng));
    params.add("encoder.patch.b", Tensor::zeros({d}, true));
    params.add("encoder.cls", random_vector(d, 0.02, rng));
    params.add("encoder.mask_token", random_vector(d, 0.02, rng));
    for (auto crop : cfg.crop_sizes) {
        const std::size_t n = cfg.patches(crop);
        std::vector<double> table((n + 1) * d);
        for (auto& x : table) x = rng.normal() * 0.02;
        round_to_precision(table);
        params.add("encoder.pos." + std::to_string(crop), Tensor({n + 1, d}, std::move(table), true));
    }
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        params.add(block_name(i, "ln1.g"), Tensor(Shape{d}, std::vector<double>(d, 1.0), true));
        params.add(block_name(i, "ln1.b"), Tensor::zeros({d}, true));
        // Near-uniform attention averages the class token over mostly-background
        // patches; a larger gain lets it single out the foreground from the start.
        params.add(block_name(i, "qkv.w"), random_matrix(d, 3 * d, rng, 3.0));
        params.add(block_name(i, "qkv.b"), Tensor::zeros({3 * d}, true));
        params.add(block_name(i, "proj.w"), random_matrix(d, d, rng));
        params.add(block_name(i, "proj.b"), Tensor::zeros({d}, true));
        params.add(block_name(i, "ln2.g"), Tensor(Shape{d}, std::vector<double>(d, 1.0), true));
        params.add(block_name(i, "ln2.b"), Tensor::zeros({d}, true));
        params.add(block_name(i, "fc1.w"), random_matrix(d, hidden, rng));
        params.add(block_name(i, "fc1.b"), Tensor::zeros({hidden}, true));
        params.add(block_name(i, "fc2.w"), random_matrix(hidden, d, rng));
        params.add(block_name(i, "fc2.b"), Tensor::zeros({d}, true));
    }
    params.add("encoder.norm.g", Tensor(Shape{d}, std::vector<double>(d, 1.0), true));
    params.add("encoder.norm.b", Tensor::zeros({d}, true));
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    params.add(kEncoderOutWeight, Tensor({d, d}, std::move(eye), true));
    params.add(kEncoderOutBias, Tensor::zeros({d}, true));
}

EncoderOutput encode(const EncoderConfig& cfg, const ParamStore& params, const Tensor& images,
                     std::span<const MaskGrid> masks, Rng* drop_rng) {
    if (images.ndim() != 4 || images.dim(1) != cfg.channels || images.dim(2) != images.dim(3)) {
        throw ShapeError("encode: expected square [B, " + std::to_string(cfg.channels) + ", S, S] images, got " +
                         shape_str(images.shape()));
    }
    const std::size_t batch = images.dim(0), side = images.dim(2);
    const std::string pos_name = "encoder.pos." + std::to_string(side);
    if (!params.contains(pos_name)) {
        throw ShapeError("encode: no positional table for crop size " + std::to_string(side));
    }
    const std::size_t grid = side / cfg.patch_size, n = grid * grid, d = cfg.embed_dim;

    Tensor x = affine(patchify(images, cfg.patch_size), params.at("encoder.patch.w"), params.at("encoder.patch.b"));

    if (!masks.empty()) {
        if (masks.size() != 1 && masks.size() != batch)
            throw ShapeError("encode: " + std::to_string(masks.size()) + " masks for a batch of " + std::to_string(batch));
        std::vector<std::uint8_t> bits;
        bits.reserve(batch * n);
        for (std::size_t b = 0; b < batch; ++b) {
            const MaskGrid& m = masks[masks.size() == 1 ? 0 : b];
            if (m.rows() != grid || m.cols() != grid) {
                throw ShapeError("encode: mask grid " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                 " does not match patch grid " + std::to_string(grid) + "x" + std::to_string(grid));
            }
            bits.insert(bits.end(), m.bits().begin(), m.bits().end());
        }
        x = mask_rows(x, bits, params.at("encoder.mask_token"));
    }

    x = add_tiled(prepend_token(x, params.at("encoder.cls")), params.at(pos_name));

    const std::size_t heads = cfg.heads;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const double rate = cfg.depth > 1 ? cfg.drop_path * static_cast<double>(i) / static_cast<double>(cfg.depth - 1)
                                          : cfg.drop_path;
        auto residual = [&](const Tensor& branch) {
            if (!drop_rng || rate <= 0.0) return add(x, branch);
            std::vector<double> keep(batch);
            for (auto& k : keep) k = drop_rng->bernoulli(1.0 - rate) ? 1.0 / (1.0 - rate) : 0.0;
            return add(x, scale_batch(branch, keep));
        };
        Tensor h = layer_norm(x, params.at(block_name(i, "ln1.g")), params.at(block_name(i, "ln1.b")));
        h = affine(h, params.at(block_name(i, "qkv.w")), params.at(block_name(i, "qkv.b")));
        h = attention(h, heads);
        h = affine(h, params.at(block_name(i, "proj.w")), params.at(block_name(i, "proj.b")));
        x = residual(h);
        h = layer_norm(x, params.at(block_name(i, "ln2.g")), params.at(block_name(i, "ln2.b")));
        h = gelu(affine(h, params.at(block_name(i, "fc1.w")), params.at(block_name(i, "fc1.b"))));
        h = affine(h, params.at(block_name(i, "fc2.w")), params.at(block_name(i, "fc2.b")));
        x = residual(h);
    }
    if (cfg.depth > 0) x = layer_norm(x, params.at("encoder.norm.g"), params.at("encoder.norm.b"));
    x = affine(x, params.at(kEncoderOutWeight), params.at(kEncoderOutBias));

    EncoderOutput out;
    out.cls = reshape(narrow(x, 1, 0, 1), {batch, d});
    out.patches = narrow(x, 1, 1, n);
    out.rows = grid;
    out.cols = grid;
    return out;
}

}  // namespace franca
