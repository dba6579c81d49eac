#include "franca/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "franca/random.hpp"

namespace franca {

namespace fs = std::filesystem;

namespace {

bool inside(std::size_t cls, double dy, double dx, double r) {
    switch (cls) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
        case 2: {
            if (dy < -r || dy > 0.7 * r) return false;
            return std::abs(dx) <= (dy + r) / 1.7;
        }
        default: {
            const double arm = r / 3.0;
            return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
        }
    }
}

// Center coordinate in [lo, hi) clipped so the shape's bounding radius stays on the canvas.
double place(double lo, double hi, double r, double canvas, Rng& rng) {
    const double a = std::max(lo, r), b = std::min(hi, canvas - r);
    if (b <= a) return 0.5 * (lo + hi);
    return rng.uniform(a, b);
}

}  // namespace

void ShapesConfig::validate() const {
    if (canvas == 0 || patch == 0 || canvas % patch != 0)
        throw std::invalid_argument("shapes: canvas " + std::to_string(canvas) + " not divisible by patch " +
                                    std::to_string(patch));
    if (canvas < 16) throw std::invalid_argument("shapes: canvas must be at least 16 pixels");
    if (classes < 1 || classes > kShapeNames.size()) throw std::invalid_argument("shapes: classes must be in [1, 4]");
    if (shapes_per_image == 0) throw std::invalid_argument("shapes: shapes_per_image must be at least 1");
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("shapes: beta must lie in [0, 1]");
    if (!(color_jitter >= 0.0 && color_jitter <= 0.25)) throw std::invalid_argument("shapes: color_jitter must lie in [0, 0.25]");
}

int quadrant_of(double cy, double cx, std::size_t canvas) {
    const double half = static_cast<double>(canvas) / 2.0;
    return (cy >= half ? 2 : 0) + (cx >= half ? 1 : 0);
}

std::vector<int> ShapesDataset::patch_labels(std::size_t index) const { return patch_majority(pixel_classes.at(index), patch); }

std::vector<int> patch_majority(const ByteMap& pixels, std::size_t patch) {
    if (patch == 0 || pixels.height % patch != 0 || pixels.width % patch != 0)
        throw ShapeError("patch_majority: map not divisible by patch size");
    const std::size_t gr = pixels.height / patch, gc = pixels.width / patch;
    std::vector<int> out(gr * gc);
    std::array<std::size_t, 256> counts{};
    for (std::size_t pr = 0; pr < gr; ++pr) {
        for (std::size_t pc = 0; pc < gc; ++pc) {
            counts.fill(0);
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    ++counts[pixels.values[(pr * patch + dy) * pixels.width + pc * patch + dx]];
            out[pr * gc + pc] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        }
    }
    return out;
}

ShapesDataset generate_shapes(const ShapesConfig& cfg, std::size_t count, std::uint64_t stream) {
    cfg.validate();
    if (count == 0) throw std::invalid_argument("generate_shapes: count must be at least 1");
    const std::size_t s = cfg.canvas, n = s * s;
    const double canvas = static_cast<double>(s), half = canvas / 2.0;
    const Rng root(cfg.seed, stream);

    ShapesDataset ds;
    ds.canvas = s;
    ds.patch = cfg.patch;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = root.split(i);
        const auto cls = static_cast<std::size_t>(rng.below(cfg.classes));
        std::array<double, 3> bg{}, fg{};
        for (auto& c : bg) c = 0.25 + rng.uniform(-cfg.color_jitter, cfg.color_jitter);
        for (auto& c : fg) c = 0.75 + rng.uniform(-cfg.color_jitter, cfg.color_jitter);

        std::vector<double> px(3 * n);
        for (std::size_t c = 0; c < 3; ++c) std::fill(px.begin() + c * n, px.begin() + (c + 1) * n, bg[c]);
        ByteMap map{s, s, std::vector<std::uint8_t>(n, 0)};
        int first_quadrant = 0;
        for (std::size_t k = 0; k < cfg.shapes_per_image; ++k) {
            const double r = rng.uniform(0.2, 0.3) * canvas;
            double cy, cx;
            if (rng.bernoulli(cfg.beta)) {
                const double y0 = (cls % 4) >= 2 ? half : 0.0, x0 = (cls % 2) == 1 ? half : 0.0;
                cy = place(y0, y0 + half, r, canvas, rng);
                cx = place(x0, x0 + half, r, canvas, rng);
            } else {
                cy = place(0.0, canvas, r, canvas, rng);
                cx = place(0.0, canvas, r, canvas, rng);
            }
            if (k == 0) first_quadrant = quadrant_of(cy, cx, s);
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) {
                    if (!inside(cls, static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx, r)) continue;
                    map.values[y * s + x] = static_cast<std::uint8_t>(cls + 1);
                    for (std::size_t c = 0; c < 3; ++c) px[c * n + y * s + x] = fg[c];
                }
            }
        }
        // Quantized to 8 bits so the in-memory split equals its PPM files.
        for (auto& v : px) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
        round_to_precision(px);
        ds.images.emplace_back(Shape{3, s, s}, std::move(px));
        ds.labels.push_back(static_cast<int>(cls));
        ds.quadrants.push_back(first_quadrant);
        ds.pixel_classes.push_back(std::move(map));
    }
    return ds;
}

std::vector<fs::path> write_shapes_split(const fs::path& dir, ShapesDataset& ds) {
    std::vector<fs::path> written;
    ds.paths.clear();
    std::ostringstream manifest;
    manifest << "relative-path,label,quadrant\n";
    const std::size_t width = std::to_string(std::max<std::size_t>(ds.size(), 1) - 1).size();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::string idx = std::to_string(i);
        idx.insert(0, width - idx.size(), '0');
        const std::string rel = "images/" + std::string(kShapeNames.at(static_cast<std::size_t>(ds.labels[i]))) + "/" + idx + ".ppm";
        write_ppm(dir / rel, ds.images[i]);
        write_pgm(dir / "masks" / (idx + ".pgm"), ds.pixel_classes[i]);
        written.push_back(dir / rel);
        written.push_back(dir / "masks" / (idx + ".pgm"));
        ds.paths.push_back(rel);
        manifest << rel << ',' << ds.labels[i] << ',' << ds.quadrants[i] << '\n';
    }
    std::ofstream out(dir / "manifest.csv", std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir / "manifest.csv").string());
    out << manifest.str();
    written.push_back(dir / "manifest.csv");
    return written;
}

ShapesDataset load_shapes_split(const fs::path& dir, std::size_t patch) {
    std::ifstream in(dir / "manifest.csv");
    if (!in) throw FormatError("missing manifest: " + (dir / "manifest.csv").string());
    std::string line;
    std::getline(in, line);
    if (line != "relative-path,label,quadrant") throw FormatError((dir / "manifest.csv").string() + ": unexpected header");
    ShapesDataset ds;
    ds.patch = patch;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.rfind(',');
        if (a == std::string::npos || a == b) throw FormatError("malformed manifest line: " + line);
        const std::string rel = line.substr(0, a);
        const fs::path stem = fs::path(rel).stem();
        ds.images.push_back(read_ppm(dir / rel));
        ds.labels.push_back(std::stoi(line.substr(a + 1, b - a - 1)));
        ds.quadrants.push_back(std::stoi(line.substr(b + 1)));
        ds.pixel_classes.push_back(read_pgm(dir / "masks" / (stem.string() + ".pgm")));
        ds.paths.push_back(rel);
        const auto& img = ds.images.back();
        if (img.dim(1) != img.dim(2) || (ds.canvas != 0 && img.dim(1) != ds.canvas))
            throw FormatError(rel + ": image size " + shape_str(img.shape()) + " inconsistent with the split");
        ds.canvas = img.dim(1);
    }
    if (ds.images.empty()) throw FormatError("empty split: " + dir.string());
    return ds;
}

}  // namespace franca
