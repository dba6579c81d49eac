#include "franca/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace franca {

void CropConfig::validate() const {
    if (global_count < 2) throw std::invalid_argument("multi-crop: at least two global crops are required");
    if (global_size == 0 || local_size == 0) throw std::invalid_argument("multi-crop: crop sizes must be positive");
    if (local_count > 0 && local_size >= global_size)
        throw std::invalid_argument("multi-crop: local crop size must be smaller than the global crop size");
    auto range_ok = [](double lo, double hi) { return lo > 0.0 && lo <= hi && hi <= 1.0; };
    if (!range_ok(global_scale_min, global_scale_max) || !range_ok(local_scale_min, local_scale_max))
        throw std::invalid_argument("multi-crop: scale ranges must satisfy 0 < min <= max <= 1");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("multi-crop: flip_prob must lie in [0, 1]");
    if (!(brightness >= 0.0) || !(contrast >= 0.0 && contrast < 1.0))
        throw std::invalid_argument("multi-crop: jitter ranges must be non-negative (contrast < 1)");
}

Tensor crop_resize(const Tensor& image, double top, double left, double side, std::size_t out) {
    if (image.ndim() != 3) throw ShapeError("crop_resize: expected [C, H, W], got " + shape_str(image.shape()));
    if (out == 0 || !(side > 0.0)) throw std::invalid_argument("crop_resize: empty output or region");
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    const double step = side / static_cast<double>(out);
    const auto src = image.data();
    std::vector<double> v(ch * out * out);

    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [&](double origin, std::size_t limit) {
        std::vector<Tap> t(out);
        for (std::size_t k = 0; k < out; ++k) {
            const double pos = std::clamp(origin + (static_cast<double>(k) + 0.5) * step - 0.5, 0.0,
                                          static_cast<double>(limit - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(pos));
            const std::size_t i1 = std::min(i0 + 1, limit - 1);
            t[k] = {i0, i1, pos - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(top, h), tx = taps(left, w);
    for (std::size_t c = 0; c < ch; ++c) {
        const double* plane = src.data() + c * h * w;
        for (std::size_t y = 0; y < out; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < out; ++x) {
                const auto& b = tx[x];
                const double top_row = plane[a.i0 * w + b.i0] * (1.0 - b.f) + plane[a.i0 * w + b.i1] * b.f;
                const double bot_row = plane[a.i1 * w + b.i0] * (1.0 - b.f) + plane[a.i1 * w + b.i1] * b.f;
                v[(c * out + y) * out + x] = top_row * (1.0 - a.f) + bot_row * a.f;
            }
        }
    }
    round_to_precision(v);
    return Tensor({ch, out, out}, std::move(v));
}

Tensor resize_bilinear(const Tensor& image, std::size_t out) {
    if (image.ndim() != 3 || image.dim(1) != image.dim(2))
        throw ShapeError("resize_bilinear: expected a square [C, S, S] image, got " + shape_str(image.shape()));
    return crop_resize(image, 0.0, 0.0, static_cast<double>(image.dim(1)), out);
}

Tensor hflip(const Tensor& image) {
    if (image.ndim() != 3) throw ShapeError("hflip: expected [C, H, W], got " + shape_str(image.shape()));
    const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
    std::vector<double> v(image.size());
    const auto src = image.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t x = 0; x < w; ++x) v[r * w + x] = src[r * w + (w - 1 - x)];
    return Tensor(image.shape(), std::move(v));
}

Tensor color_jitter(const Tensor& image, double brightness, double contrast) {
    const auto src = image.data();
    double mean = 0.0;
    for (double x : src) mean += x;
    mean /= static_cast<double>(src.size());
    std::vector<double> v(src.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp((src[i] - mean) * contrast + mean + brightness, 0.0, 1.0);
    round_to_precision(v);
    return Tensor(image.shape(), std::move(v));
}

Tensor apply_crop(const Tensor& image, const CropRecord& record, std::size_t out) {
    Tensor t = crop_resize(image, record.top, record.left, record.side, out);
    if (record.flipped) t = hflip(t);
    if (record.brightness != 0.0 || record.contrast != 1.0) t = color_jitter(t, record.brightness, record.contrast);
    return t;
}

CropSet multi_crop(const Tensor& image, const CropConfig& cfg, Rng& rng) {
    cfg.validate();
    if (image.ndim() != 3 || image.dim(1) != image.dim(2))
        throw ShapeError("multi_crop: expected a square [C, S, S] image, got " + shape_str(image.shape()));
    const double s = static_cast<double>(image.dim(1));
    if (cfg.global_size > image.dim(1)) throw std::invalid_argument("multi_crop: global crop larger than the image");

    auto draw = [&](double lo, double hi) {
        CropRecord r;
        const double scale = lo == hi ? lo : rng.uniform(lo, hi);
        r.side = std::sqrt(scale) * s;
        r.top = rng.uniform(0.0, s - r.side);
        r.left = rng.uniform(0.0, s - r.side);
        r.flipped = rng.bernoulli(cfg.flip_prob);
        r.brightness = cfg.brightness > 0.0 ? rng.uniform(-cfg.brightness, cfg.brightness) : 0.0;
        r.contrast = cfg.contrast > 0.0 ? rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast) : 1.0;
        return r;
    };
    CropSet set;
    for (std::size_t i = 0; i < cfg.global_count; ++i) {
        set.global_records.push_back(draw(cfg.global_scale_min, cfg.global_scale_max));
        set.globals.push_back(apply_crop(image, set.global_records.back(), cfg.global_size));
    }
    for (std::size_t i = 0; i < cfg.local_count; ++i) {
        set.local_records.push_back(draw(cfg.local_scale_min, cfg.local_scale_max));
        set.locals.push_back(apply_crop(image, set.local_records.back(), cfg.local_size));
    }
    return set;
}

}  // namespace franca
