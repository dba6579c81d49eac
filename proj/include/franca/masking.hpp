#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "franca/random.hpp"

namespace franca {

// Patch-level mask of one crop. true = masked (hidden from the student).
class MaskGrid {
public:
    MaskGrid() = default;
    MaskGrid(std::size_t rows, std::size_t cols, bool value = false);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t cells() const { return bits_.size(); }
    bool at(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool masked) { bits_[r * cols_ + c] = masked ? 1 : 0; }
    std::size_t masked_count() const;
    double mask_ratio() const;
    // Raster order, one byte per cell; matches patchify's patch order.
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool operator==(const MaskGrid& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class MaskStrategy { random, block, inverse_block, cyclic };

MaskStrategy parse_mask_strategy(std::string_view name);
std::string to_string(MaskStrategy s);

struct Rect {
    std::size_t height = 0;
    std::size_t width = 0;
};

// Rectangle fitting a rows x cols grid whose area is closest to `area`; ties go
// to the squarest shape, then to wider-than-tall. A positive target never
// yields an empty rectangle.
Rect nearest_rectangle(std::size_t rows, std::size_t cols, double area);

MaskGrid random_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng);
MaskGrid block_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng);
// Centered visible rectangle; the rng is not consumed.
MaskGrid inverse_block_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng);
MaskGrid inverse_block_mask(std::size_t rows, std::size_t cols, double ratio);
// Inverse block mask rolled by a uniform (dr, dc) with wraparound.
MaskGrid cyclic_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng);
// Cell (r, c) moves to ((r + dr) mod rows, (c + dc) mod cols).
MaskGrid cyclic_shift(const MaskGrid& mask, std::size_t dr, std::size_t dc);

MaskGrid make_mask(MaskStrategy strategy, std::size_t rows, std::size_t cols, double ratio, Rng& rng);

struct CoverageStats {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t samples = 0;
    std::vector<double> visible_freq;  // raster order
    double max_deviation = 0.0;        // max |freq - (1 - ratio)|

    double at(std::size_t r, std::size_t c) const { return visible_freq[r * cols + c]; }
    // "row,col,visible_freq" header, one line per cell.
    void write_csv(std::ostream& os) const;
};

CoverageStats coverage_stats(MaskStrategy strategy, std::size_t rows, std::size_t cols, double ratio,
                             std::size_t samples, Rng& rng);

}  // namespace franca
