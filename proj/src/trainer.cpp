#include "franca/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "franca/augment.hpp"
#include "franca/ops.hpp"
#include "franca/sinkhorn.hpp"

namespace franca {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMaskStream = 1ULL << 32;
constexpr std::uint64_t kDropStream = 2ULL << 32;

Tensor stack_images(std::span<const Tensor> images) {
    const Shape& s = images.front().shape();
    std::vector<double> v;
    v.reserve(images.size() * images.front().size());
    for (const auto& img : images) {
        if (img.shape() != s) throw ShapeError("stack_images: mixed image shapes");
        v.insert(v.end(), img.data().begin(), img.data().end());
    }
    Shape out{images.size()};
    out.insert(out.end(), s.begin(), s.end());
    return Tensor(std::move(out), std::move(v));
}

Tensor row_block(const Tensor& t, std::size_t start, std::size_t count) {
    const std::size_t c = t.cols();
    std::vector<double> v(t.data().begin() + static_cast<std::ptrdiff_t>(start * c),
                          t.data().begin() + static_cast<std::ptrdiff_t>((start + count) * c));
    return Tensor({count, c}, std::move(v));
}

bool decays(const std::string& name) { return name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0; }

struct ChunkResult {
    GradStore grads;
    std::vector<double> level;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each worker inherits
// the caller's precision mode.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(n, std::max<std::size_t>(threads, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const Precision p = precision();
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            PrecisionScope scope(p);
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

void LossHistory::push(double v) {
    values_.push_back(v);
    while (values_.size() > capacity_) values_.pop_front();
}

double LossHistory::mean() const {
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

double cosine_schedule(std::size_t step, std::size_t total, std::size_t warmup, double start, double end) {
    if (step < warmup) return start * static_cast<double>(step) / static_cast<double>(warmup);
    if (total <= warmup) return start;
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
    return end + (start - end) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Schedules schedules_at(const TrainConfig& cfg, std::size_t step) {
    Schedules s;
    s.lr = cosine_schedule(step, cfg.steps, cfg.warmup_steps, cfg.lr, cfg.min_lr);
    s.momentum = cosine_schedule(step, cfg.steps, 0, cfg.momentum_start, cfg.momentum_end);
    if (step >= cfg.warmup_steps) {
        s.teacher_temp = cfg.teacher_temp_end;
    } else {
        const double f = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
        s.teacher_temp = cfg.teacher_temp_start + (cfg.teacher_temp_end - cfg.teacher_temp_start) * f;
    }
    return s;
}

void ema_update(ParamStore& teacher, const ParamStore& student, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("ema_update: momentum must lie in [0, 1]");
    if (teacher.size() != student.size()) throw ShapeError("ema_update: teacher and student hold different parameter sets");
    for (auto& [name, t] : teacher) {
        const Tensor& s = student.at(name);
        if (s.shape() != t.shape())
            throw ShapeError("ema_update: shape mismatch for '" + name + "': " + shape_str(t.shape()) + " vs " +
                             shape_str(s.shape()));
        if (momentum == 1.0) continue;
        auto td = t.mutable_data();
        const auto sd = s.data();
        for (std::size_t i = 0; i < td.size(); ++i) td[i] = momentum * td[i] + (1.0 - momentum) * sd[i];
        round_to_precision(td);
    }
}

TrainState init_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    Rng rng(cfg.seed, 7);
    init_encoder(cfg.encoder(), state.student, rng);
    init_heads(cfg.head_bank(), state.student, rng);
    state.teacher = state.student.clone();
    state.teacher.set_requires_grad(false);
    return state;
}

std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t batch, Rng& rng) {
    if (batch > dataset_size)
        throw std::invalid_argument("batch size " + std::to_string(batch) + " exceeds dataset size " +
                                    std::to_string(dataset_size));
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch; ++i) std::swap(order[i], order[i + rng.below(dataset_size - i)]);
    order.resize(batch);
    return order;
}

StepRecord train_step(TrainState& state, const TrainConfig& cfg, std::span<const Tensor> images, Rng& rng) {
    if (images.empty()) throw std::invalid_argument("train_step: empty batch");
    const EncoderConfig enc = cfg.encoder();
    const HeadBankConfig bank = cfg.head_bank();
    const CropConfig crop_cfg = cfg.crops();
    const std::size_t B = images.size(), G = cfg.global_crops, L = cfg.local_crops;
    const std::size_t grid = enc.grid(cfg.image_size), n = grid * grid;
    const std::size_t levels = bank.levels();
    const Schedules sched = schedules_at(cfg, state.step);

    // Views and masks.
    const double ratio = rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
    std::vector<CropSet> crops(B);
    std::vector<MaskGrid> masks(G * B);  // index g * B + b
    for (std::size_t b = 0; b < B; ++b) {
        Rng crop_rng = rng.split(b);
        crops[b] = multi_crop(images[b], crop_cfg, crop_rng);
        Rng mask_rng = rng.split(kMaskStream | b);
        for (std::size_t g = 0; g < G; ++g) masks[g * B + b] = make_mask(cfg.mask_strategy, grid, grid, ratio, mask_rng);
    }

    // Teacher: unmasked global crops, balanced targets per level.
    std::vector<Tensor> teacher_in;
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t b = 0; b < B; ++b) teacher_in.push_back(crops[b].globals[g]);
    const EncoderOutput tout = encode(enc, state.teacher, stack_images(teacher_in));

    std::vector<std::size_t> masked_rows, masked_offset(G * B + 1, 0);
    for (std::size_t gb = 0; gb < G * B; ++gb) {
        masked_offset[gb] = masked_rows.size();
        const auto& bits = masks[gb].bits();
        for (std::size_t p = 0; p < n; ++p)
            if (bits[p]) masked_rows.push_back(gb * n + p);
    }
    masked_offset[G * B] = masked_rows.size();
    const Tensor teacher_patch = masked_rows.empty() ? Tensor() : gather_rows(tout.patches, masked_rows);
    const auto teacher_logits = bank_forward(bank, state.teacher, tout.cls, teacher_patch, 1.0);
    const SKConfig sk{cfg.sk_iterations, sched.teacher_temp, 1e-30};
    std::vector<Tensor> cls_targets(levels), patch_targets(levels);
    for (std::size_t lv = 0; lv < levels; ++lv) {
        cls_targets[lv] = sk_targets(teacher_logits[lv].cls, sk);
        if (teacher_logits[lv].patch.defined()) patch_targets[lv] = sk_targets(teacher_logits[lv].patch, sk);
    }

    // Student: one tape per chunk of images, reduced in chunk order.
    const std::size_t chunk = cfg.micro_batch == 0 ? B : std::min(cfg.micro_batch, B);
    const std::size_t chunks = (B + chunk - 1) / chunk;
    std::vector<ChunkResult> results(chunks);
    LossOptions loss_opts;
    loss_opts.patch_weight = cfg.patch_weight;
    loss_opts.cls_rows = static_cast<double>(B);
    loss_opts.patch_rows = static_cast<double>(masked_rows.size());

    parallel_for(chunks, cfg.threads, [&](std::size_t k) {
        const std::size_t b0 = k * chunk, b1 = std::min(B, b0 + chunk), bc = b1 - b0;
        ParamStore view = state.student.views();
        Tape tape;
        TapeScope scope(tape);
        Rng drop_rng = rng.split(kDropStream | k);
        Rng* drop = cfg.drop_path > 0.0 ? &drop_rng : nullptr;

        std::vector<Tensor> g_in, l_in;
        std::vector<MaskGrid> g_masks;
        std::vector<std::size_t> rows;
        std::vector<std::size_t> target_rows;
        for (std::size_t g = 0; g < G; ++g) {
            for (std::size_t b = b0; b < b1; ++b) {
                const std::size_t local = g * bc + (b - b0);
                g_in.push_back(crops[b].globals[g]);
                g_masks.push_back(masks[g * B + b]);
                const auto& bits = masks[g * B + b].bits();
                for (std::size_t p = 0; p < n; ++p)
                    if (bits[p]) rows.push_back(local * n + p);
                for (std::size_t r = masked_offset[g * B + b]; r < masked_offset[g * B + b + 1]; ++r) target_rows.push_back(r);
            }
        }
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t b = b0; b < b1; ++b) l_in.push_back(crops[b].locals[l]);

        const EncoderOutput sg = encode(enc, view, stack_images(g_in), g_masks, drop);
        Tensor cls = sg.cls;
        if (L > 0) {
            const EncoderOutput sl = encode(enc, view, stack_images(l_in), {}, drop);
            const Tensor parts[2] = {sg.cls, sl.cls};
            cls = concat(parts, 0);
        }
        const Tensor patch_in = rows.empty() ? Tensor() : gather_rows(sg.patches, rows);
        const auto logits = bank_forward(bank, view, cls, patch_in, cfg.student_temp);

        std::vector<LevelStudent> student(levels);
        std::vector<LevelTargets> targets(levels);
        for (std::size_t lv = 0; lv < levels; ++lv) {
            for (std::size_t s = 0; s < G + L; ++s) student[lv].cls_logits.push_back(narrow(logits[lv].cls, 0, s * bc, bc));
            for (std::size_t g = 0; g < G; ++g) targets[lv].cls_targets.push_back(row_block(cls_targets[lv], g * B + b0, bc));
            if (logits[lv].patch.defined()) {
                student[lv].patch_logits = logits[lv].patch;
                targets[lv].patch_targets = gather_rows(patch_targets[lv], target_rows);
            }
        }
        const LossBreakdown loss = total_loss(student, targets, loss_opts);
        tape.backward(loss.total);
        results[k].grads = view.grads();
        results[k].level = loss.level;
    });

    StepRecord rec;
    rec.step = state.step;
    rec.lr = sched.lr;
    rec.ema_momentum = sched.momentum;
    rec.teacher_temp = sched.teacher_temp;
    rec.level_loss.assign(levels, 0.0);
    GradStore grads;
    for (const auto& r : results) {
        accumulate(grads, r.grads);
        for (std::size_t lv = 0; lv < levels; ++lv) rec.level_loss[lv] += r.level[lv];
    }
    rec.total_loss = 0.0;
    for (double v : rec.level_loss) rec.total_loss += v;
    if (!std::isfinite(rec.total_loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << state.step << ":";
        for (std::size_t lv = 0; lv < levels; ++lv) msg << " level_" << lv << "=" << rec.level_loss[lv];
        throw TrainingError(msg.str());
    }

    if (sched.lr > 0.0) {
        AdamWConfig opt;
        opt.lr = sched.lr;
        opt.weight_decay = cfg.weight_decay;
        adamw_step(state.student, grads, state.optimizer, opt, decays);
        renormalize_prototypes(bank, state.student);
    }
    ema_update(state.teacher, state.student, sched.momentum);
    for (const auto& [name, t] : state.teacher)
        if (t.requires_grad() || t.has_grad()) throw std::logic_error("teacher parameter '" + name + "' tracks gradient");

    state.step += 1;
    state.history.push(rec.total_loss);
    return rec;
}

NamedTensors state_tensors(const TrainState& state) {
    NamedTensors out;
    for (const auto& [name, t] : state.student) {
        out.emplace(name, t.detach());
        out.emplace("teacher." + name, state.teacher.at(name).detach());
        auto moment = [&](const std::map<std::string, std::vector<double>>& src) {
            auto it = src.find(name);
            return Tensor(t.shape(), it == src.end() || it->second.empty() ? std::vector<double>(t.size(), 0.0) : it->second);
        };
        out.emplace("adam.m." + name, moment(state.optimizer.m));
        out.emplace("adam.v." + name, moment(state.optimizer.v));
    }
    out.emplace("state.step", Tensor::scalar(static_cast<double>(state.step)));
    out.emplace("state.adam_step", Tensor::scalar(static_cast<double>(state.optimizer.step)));
    return out;
}

void save_checkpoint(const fs::path& path, const TrainState& state) {
    if (state.step > (1u << 24)) throw FormatError("step counter too large for the checkpoint format");
    write_checkpoint(path, state_tensors(state));
}

namespace {

const Tensor& expect_tensor(const NamedTensors& file, const std::string& name, const Shape& shape, const fs::path& path) {
    auto it = file.find(name);
    if (it == file.end()) throw FormatError(path.string() + ": missing tensor '" + name + "'");
    if (it->second.shape() != shape)
        throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                          ", expected " + shape_str(shape));
    return it->second;
}

void copy_into(Tensor& dst, const Tensor& src) {
    auto d = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
}

}  // namespace

void load_checkpoint(const fs::path& path, TrainState& state) {
    const NamedTensors file = read_checkpoint(path);
    const NamedTensors expected = state_tensors(state);
    for (const auto& [name, t] : file)
        if (!expected.count(name)) throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
    for (auto& [name, t] : state.student) {
        copy_into(t, expect_tensor(file, name, t.shape(), path));
        copy_into(state.teacher.at(name), expect_tensor(file, "teacher." + name, t.shape(), path));
        const auto m = expect_tensor(file, "adam.m." + name, t.shape(), path).to_vector();
        const auto v = expect_tensor(file, "adam.v." + name, t.shape(), path).to_vector();
        state.optimizer.m[name] = m;
        state.optimizer.v[name] = v;
    }
    state.step = static_cast<std::size_t>(expect_tensor(file, "state.step", {}, path).item());
    state.optimizer.step = static_cast<std::int64_t>(expect_tensor(file, "state.adam_step", {}, path).item());
}

ParamStore load_student(const fs::path& path, const TrainConfig& cfg) {
    const NamedTensors file = read_checkpoint(path);
    ParamStore params = init_state(cfg).student;
    for (auto& [name, t] : params) copy_into(t, expect_tensor(file, name, t.shape(), path));
    for (const auto& [name, t] : file) {
        const bool aux = name.rfind("teacher.", 0) == 0 || name.rfind("adam.", 0) == 0 || name.rfind("state.", 0) == 0;
        if (!aux && !params.contains(name)) throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
    }
    return params;
}

ParamStore load_model(const fs::path& path, const TrainConfig& cfg) {
    const NamedTensors file = read_checkpoint(path);
    ParamStore params = init_state(cfg).student;
    const bool has_teacher = file.count("teacher." + params.begin()->first) != 0;
    for (auto& [name, t] : params) copy_into(t, expect_tensor(file, has_teacher ? "teacher." + name : name, t.shape(), path));
    params.set_requires_grad(false);
    return params;
}

ParamStore teacher_params(const TrainState& state) { return state.teacher.clone(); }

std::string metrics_header(std::size_t levels) {
    std::string h = "step,total_loss";
    for (std::size_t i = 0; i < levels; ++i) h += ",loss_level_" + std::to_string(i);
    return h + ",lr,ema_momentum,teacher_temp";
}

std::string format_metrics_row(const StepRecord& r) {
    char buf[64];
    std::string line = std::to_string(r.step);
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        line += buf;
    };
    put(r.total_loss);
    for (double v : r.level_loss) put(v);
    put(r.lr);
    put(r.ema_momentum);
    put(r.teacher_temp);
    return line;
}

MetricsLog::MetricsLog(const fs::path& path, std::size_t levels, bool append) : levels_(levels) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const bool fresh = !append || !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw FormatError("cannot write metrics log " + path.string());
    if (fresh) out_ << metrics_header(levels) << '\n';
    out_.flush();
}

void MetricsLog::write(const StepRecord& r) {
    if (r.level_loss.size() != levels_) throw std::invalid_argument("metrics row has the wrong number of levels");
    out_ << format_metrics_row(r) << '\n';
    out_.flush();
}

TrainRunResult run_training(const TrainConfig& cfg, std::span<const Tensor> dataset, const TrainRunOptions& options) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("run_training: empty dataset");
    TrainRunResult result;
    result.state = init_state(cfg);
    std::unique_ptr<MetricsLog> log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        write_file_atomic(options.out_dir / "config.cfg", config_to_text(cfg));
        result.artifacts.push_back(options.out_dir / "config.cfg");
        log = std::make_unique<MetricsLog>(options.out_dir / "metrics.csv", cfg.head_bank().levels());
        result.artifacts.push_back(options.out_dir / "metrics.csv");
    }
    const Rng root(cfg.seed, 1);
    std::vector<Tensor> batch;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        Rng step_rng = root.split(s);
        const auto idx = sample_batch(dataset.size(), cfg.batch_size, step_rng);
        batch.clear();
        for (auto i : idx) {
            const Tensor& img = dataset[i];
            batch.push_back(img.dim(1) == cfg.image_size ? img : resize_bilinear(img, cfg.image_size));
        }
        Rng aug_rng = step_rng.split(1);
        StepRecord rec = train_step(result.state, cfg, batch, aug_rng);
        if (log) log->write(rec);
        if (options.on_step) options.on_step(rec);
        result.records.push_back(std::move(rec));
        if (!options.out_dir.empty() && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
            const fs::path p = options.out_dir / ("checkpoint_" + std::to_string(s + 1) + ".frck");
            save_checkpoint(p, result.state);
            result.artifacts.push_back(p);
        }
    }
    if (!options.out_dir.empty()) {
        save_checkpoint(options.out_dir / "checkpoint.frck", result.state);
        result.artifacts.push_back(options.out_dir / "checkpoint.frck");
    }
    return result;
}

ImageFeatures extract_features(const TrainConfig& cfg, const ParamStore& params, std::span<const Tensor> images,
                               std::size_t chunk) {
    if (images.empty()) throw std::invalid_argument("extract_features: no images");
    const EncoderConfig enc = cfg.encoder();
    const std::size_t d = enc.embed_dim, n = enc.patches(cfg.image_size);
    std::vector<double> cls, patches;
    cls.reserve(images.size() * d);
    patches.reserve(images.size() * n * d);
    std::vector<Tensor> batch;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        batch.clear();
        for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i)
            batch.push_back(images[i].dim(1) == cfg.image_size ? images[i] : resize_bilinear(images[i], cfg.image_size));
        const EncoderOutput out = encode(enc, params, stack_images(batch));
        cls.insert(cls.end(), out.cls.data().begin(), out.cls.data().end());
        patches.insert(patches.end(), out.patches.data().begin(), out.patches.data().end());
    }
    ImageFeatures f;
    f.rows = f.cols = enc.grid(cfg.image_size);
    f.cls = Tensor({images.size(), d}, std::move(cls));
    f.patches = Tensor({images.size(), n, d}, std::move(patches));
    return f;
}

}  // namespace franca
