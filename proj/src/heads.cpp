#include "franca/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "franca/ops.hpp"

namespace franca {

namespace {

Tensor init_matrix(std::size_t in, std::size_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in + out));
    std::vector<double> v(in * out);
    for (auto& x : v) x = rng.normal() * std;
    round_to_precision(v);
    return Tensor({in, out}, std::move(v), true);
}

void normalize_rows(std::span<double> data, std::size_t cols) {
    for (std::size_t r = 0; r < data.size() / cols; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < cols; ++j) ss += data[r * cols + j] * data[r * cols + j];
        const double norm = std::sqrt(ss);
        if (norm == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) data[r * cols + j] /= norm;
    }
    round_to_precision(data);
}

void init_head(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::size_t bottleneck, std::size_t prototypes, Rng& rng) {
    params.add(prefix + ".fc0.w", init_matrix(in, hidden, rng));
    params.add(prefix + ".fc0.b", Tensor::zeros({hidden}, true));
    params.add(prefix + ".fc1.w", init_matrix(hidden, hidden, rng));
    params.add(prefix + ".fc1.b", Tensor::zeros({hidden}, true));
    params.add(prefix + ".fc2.w", init_matrix(hidden, bottleneck, rng));
    params.add(prefix + ".fc2.b", Tensor::zeros({bottleneck}, true));
    std::vector<double> protos(prototypes * bottleneck);
    for (auto& x : protos) x = rng.normal();
    normalize_rows(protos, bottleneck);
    params.add(prefix + ".proto", Tensor({prototypes, bottleneck}, std::move(protos), true));
}

}  // namespace

HeadBankConfig HeadBankConfig::matryoshka(std::size_t embed_dim, std::size_t levels, std::size_t prototypes) {
    HeadBankConfig cfg;
    cfg.embed_dim = embed_dim;
    cfg.prototypes = prototypes;
    cfg.dims.clear();
    for (std::size_t i = 0; i < levels; ++i) {
        const std::size_t shift = levels - 1 - i;
        if (embed_dim % (std::size_t{1} << shift) != 0)
            throw std::invalid_argument("matryoshka: width " + std::to_string(embed_dim) + " not divisible by 2^" +
                                        std::to_string(shift));
        cfg.dims.push_back(embed_dim >> shift);
    }
    cfg.validate();
    return cfg;
}

void HeadBankConfig::validate() const {
    if (dims.empty()) throw std::invalid_argument("head bank: at least one level is required");
    if (dims.back() != embed_dim)
        throw std::invalid_argument("head bank: last level must equal the embedding width " + std::to_string(embed_dim));
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] == 0 || (i > 0 && dims[i] <= dims[i - 1]))
            throw std::invalid_argument("head bank: level widths must be positive and strictly increasing");
        if ((prototypes * dims[i]) % embed_dim != 0 || prototypes * dims[i] / embed_dim < 2)
            throw std::invalid_argument("head bank: prototype count c*m/d must be an integer >= 2 at width " +
                                        std::to_string(dims[i]));
    }
    if (hidden_mult == 0) throw std::invalid_argument("head bank: hidden multiplier must be positive");
}

std::size_t HeadBankConfig::prototypes_at(std::size_t level) const { return prototypes * dims.at(level) / embed_dim; }

std::string head_prefix(Stream stream, std::size_t level) {
    return std::string(stream == Stream::cls ? "head.cls." : "head.patch.") + std::to_string(level);
}

Tensor slice_embedding(const Tensor& z, std::size_t m, std::span<const std::size_t> dims) {
    if (std::find(dims.begin(), dims.end(), m) == dims.end())
        throw std::invalid_argument("slice_embedding: width " + std::to_string(m) + " is not a nesting level");
    if (m == z.cols()) return z;
    return slice_cols(z, m);
}

void init_heads(const HeadBankConfig& cfg, ParamStore& params, Rng& rng) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.levels(); ++i) {
        init_head(params, head_prefix(Stream::cls, i), cfg.dims[i], cfg.hidden_at(i), cfg.bottleneck_at(i),
                  cfg.prototypes_at(i), rng);
        if (cfg.has_patch_head(i))
            init_head(params, head_prefix(Stream::patch, i), cfg.dims[i], cfg.hidden_at(i), cfg.bottleneck_at(i),
                      cfg.prototypes_at(i), rng);
    }
}

Tensor head_forward(const ParamStore& params, const std::string& prefix, const Tensor& x, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("head temperature must be positive");
    Tensor h = gelu(affine(x, params.at(prefix + ".fc0.w"), params.at(prefix + ".fc0.b")));
    h = gelu(affine(h, params.at(prefix + ".fc1.w"), params.at(prefix + ".fc1.b")));
    h = l2_normalize(affine(h, params.at(prefix + ".fc2.w"), params.at(prefix + ".fc2.b")));
    Tensor scores = matmul(h, transpose(l2_normalize(params.at(prefix + ".proto"))));
    return scale(scores, 1.0 / temperature);
}

std::vector<LevelLogits> bank_forward(const HeadBankConfig& cfg, const ParamStore& params, const Tensor& cls,
                                      const Tensor& patches, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("bank_forward: temperature must be positive");
    if (cls.ndim() != 2 || cls.cols() != cfg.embed_dim)
        throw ShapeError("bank_forward: cls " + shape_str(cls.shape()) + " does not match width " +
                         std::to_string(cfg.embed_dim));
    Tensor patch_rows;
    if (patches.defined()) {
        if (patches.cols() != cfg.embed_dim)
            throw ShapeError("bank_forward: patches " + shape_str(patches.shape()) + " do not match width " +
                             std::to_string(cfg.embed_dim));
        patch_rows = patches.ndim() == 2 ? patches : reshape(patches, {patches.rows(), cfg.embed_dim});
    }
    std::vector<LevelLogits> out(cfg.levels());
    for (std::size_t i = 0; i < cfg.levels(); ++i) {
        const std::size_t m = cfg.dims[i];
        out[i].cls = head_forward(params, head_prefix(Stream::cls, i), slice_embedding(cls, m, cfg.dims), temperature);
        if (patch_rows.defined() && cfg.has_patch_head(i))
            out[i].patch = head_forward(params, head_prefix(Stream::patch, i), slice_embedding(patch_rows, m, cfg.dims),
                                        temperature);
    }
    return out;
}

void renormalize_prototypes(const HeadBankConfig& cfg, ParamStore& params) {
    for (std::size_t i = 0; i < cfg.levels(); ++i) {
        for (Stream s : {Stream::cls, Stream::patch}) {
            const std::string name = head_prefix(s, i) + ".proto";
            if (!params.contains(name)) continue;
            Tensor& p = params.at(name);
            normalize_rows(p.mutable_data(), p.cols());
        }
    }
}

LossBreakdown total_loss(std::span<const LevelStudent> student, std::span<const LevelTargets> targets,
                         const LossOptions& options) {
    if (student.size() != targets.size() || student.empty())
        throw std::invalid_argument("total_loss: " + std::to_string(student.size()) + " student levels vs " +
                                    std::to_string(targets.size()) + " target levels");
    LossBreakdown out;
    Tensor total;
    for (std::size_t lv = 0; lv < student.size(); ++lv) {
        const auto& s = student[lv];
        const auto& t = targets[lv];
        if (t.cls_targets.empty() || s.cls_logits.size() < t.cls_targets.size())
            throw std::invalid_argument("total_loss: level " + std::to_string(lv) +
                                        " needs at least as many student crops as teacher crops");
        Tensor cls_sum;
        std::size_t pairs = 0;
        for (std::size_t si = 0; si < s.cls_logits.size(); ++si) {
            for (std::size_t ti = 0; ti < t.cls_targets.size(); ++ti) {
                if (si == ti) continue;
                Tensor ce = cross_entropy(s.cls_logits[si], t.cls_targets[ti], Reduction::sum);
                cls_sum = cls_sum.defined() ? add(cls_sum, ce) : ce;
                ++pairs;
            }
        }
        if (pairs == 0) throw std::invalid_argument("total_loss: no cross-view pairs");
        const double cls_rows = options.cls_rows > 0.0 ? options.cls_rows : static_cast<double>(s.cls_logits[0].rows());
        Tensor level = scale(cls_sum, 1.0 / (cls_rows * static_cast<double>(pairs)));
        out.cls.push_back(level.item());
        double patch_value = 0.0;
        if (s.patch_logits.defined() != t.patch_targets.defined())
            throw std::invalid_argument("total_loss: patch logits and targets must both be present at level " +
                                        std::to_string(lv));
        if (s.patch_logits.defined()) {
            const double rows = options.patch_rows > 0.0 ? options.patch_rows : static_cast<double>(s.patch_logits.rows());
            Tensor patch = scale(cross_entropy(s.patch_logits, t.patch_targets, Reduction::sum),
                                 options.patch_weight / rows);
            patch_value = patch.item();
            level = add(level, patch);
        }
        out.patch.push_back(patch_value);
        out.level.push_back(level.item());
        total = total.defined() ? add(total, level) : level;
    }
    out.total = total;
    return out;
}

}  // namespace franca
