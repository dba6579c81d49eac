#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "franca/params.hpp"
#include "franca/random.hpp"
#include "franca/tensor.hpp"

namespace franca {

// Nested Matryoshka head bank. Level i reads the first dims[i] features and
// owns an independent projection head with prototypes_at(i) prototypes.
struct HeadBankConfig {
    std::size_t embed_dim = 64;
    std::vector<std::size_t> dims{4, 8, 16, 32, 64};  // ascending, last == embed_dim
    std::size_t prototypes = 256;                     // count at the full width
    bool patch_nesting = true;                        // false: patch head only at the full width
    std::size_t hidden_mult = 4;

    // Widths d / 2^(levels-1), ..., d / 2, d.
    static HeadBankConfig matryoshka(std::size_t embed_dim, std::size_t levels, std::size_t prototypes);

    void validate() const;
    std::size_t levels() const { return dims.size(); }
    std::size_t prototypes_at(std::size_t level) const;
    std::size_t hidden_at(std::size_t level) const { return hidden_mult * dims[level]; }
    std::size_t bottleneck_at(std::size_t level) const { return dims[level] / 2 > 0 ? dims[level] / 2 : 1; }
    bool has_patch_head(std::size_t level) const { return patch_nesting || level + 1 == dims.size(); }
};

enum class Stream { cls, patch };

// "head.cls.<i>" / "head.patch.<i>"
std::string head_prefix(Stream stream, std::size_t level);

// First m coordinates of the last axis; m must be one of `dims`.
Tensor slice_embedding(const Tensor& z, std::size_t m, std::span<const std::size_t> dims);

void init_heads(const HeadBankConfig& cfg, ParamStore& params, Rng& rng);

// Three affine layers (GELU between), l2-normalized bottleneck, cosine scores
// against l2-normalized prototypes divided by `temperature`. x: [R, m].
Tensor head_forward(const ParamStore& params, const std::string& prefix, const Tensor& x, double temperature);

struct LevelLogits {
    Tensor cls;    // [B, c_i]
    Tensor patch;  // [R, c_i]; undefined without patch input or patch head
};

// cls: [B, d]; patches: rows of width d (any leading shape) or undefined.
// Levels are returned in ascending width order.
std::vector<LevelLogits> bank_forward(const HeadBankConfig& cfg, const ParamStore& params, const Tensor& cls,
                                      const Tensor& patches, double temperature);

// Re-projects every prototype row onto the unit sphere.
void renormalize_prototypes(const HeadBankConfig& cfg, ParamStore& params);

// Per-level student predictions. cls_logits holds one [B, c] tensor per student
// crop with the global crops first; patch_logits stacks masked global-crop rows.
struct LevelStudent {
    std::vector<Tensor> cls_logits;
    Tensor patch_logits;
};

// Teacher targets per level: one [B, c] tensor per global crop, plus patch rows
// aligned with LevelStudent::patch_logits.
struct LevelTargets {
    std::vector<Tensor> cls_targets;
    Tensor patch_targets;
};

struct LossOptions {
    double patch_weight = 1.0;
    // Denominators for the summed cross-entropies; zero means "rows present".
    // A caller splitting one batch across several tapes passes whole-batch counts.
    double cls_rows = 0.0;
    double patch_rows = 0.0;
};

struct LossBreakdown {
    Tensor total;
    std::vector<double> level;  // per-level loss, ascending width
    std::vector<double> cls;
    std::vector<double> patch;
};

// Sum over levels (weight 1 each) of the CLS cross-entropy averaged over all
// (student crop, teacher global crop) pairs that are not the same view, plus
// patch_weight times the masked-patch cross-entropy.
LossBreakdown total_loss(std::span<const LevelStudent> student, std::span<const LevelTargets> targets,
                         const LossOptions& options = {});

}  // namespace franca
