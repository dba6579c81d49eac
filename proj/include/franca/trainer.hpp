#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "franca/config.hpp"
#include "franca/formats.hpp"
#include "franca/optim.hpp"
#include "franca/params.hpp"
#include "franca/random.hpp"

namespace franca {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Fixed-capacity window over the most recent total losses.
class LossHistory {
public:
    explicit LossHistory(std::size_t capacity = 64) : capacity_(capacity) {}
    void push(double v);
    std::size_t size() const { return values_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::deque<double>& values() const { return values_; }
    double mean() const;

private:
    std::size_t capacity_;
    std::deque<double> values_;
};

struct TrainState {
    ParamStore student;
    ParamStore teacher;  // never tracks gradient
    AdamState optimizer;
    std::size_t step = 0;
    LossHistory history;
};

struct StepRecord {
    std::size_t step = 0;  // step index the record belongs to (before increment)
    double total_loss = 0.0;
    std::vector<double> level_loss;  // ascending width
    double lr = 0.0;
    double ema_momentum = 0.0;
    double teacher_temp = 0.0;
};

// Linear warmup from 0 to `start` over `warmup` steps, then a half cosine from
// `start` to `end` reached at `total`.
double cosine_schedule(std::size_t step, std::size_t total, std::size_t warmup, double start, double end);

struct Schedules {
    double lr;
    double momentum;
    double teacher_temp;
};
Schedules schedules_at(const TrainConfig& cfg, std::size_t step);

// teacher <- m * teacher + (1 - m) * student for every parameter.
void ema_update(ParamStore& teacher, const ParamStore& student, double momentum);

// Student initialized from cfg.seed; teacher is an exact copy.
TrainState init_state(const TrainConfig& cfg);

// One optimization step on `images` ([3, S, S] each). All randomness of the
// step (crops, masks, stochastic depth) is drawn from `rng`.
StepRecord train_step(TrainState& state, const TrainConfig& cfg, std::span<const Tensor> images, Rng& rng);

// Batch image indices for a step, without replacement within the batch.
std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t batch, Rng& rng);

// Student under bare names, teacher under "teacher.", Adam moments under
// "adam.m." / "adam.v.", counters "state.step" and "state.adam_step".
NamedTensors state_tensors(const TrainState& state);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
// Fills `state` (already shaped by init_state) from a checkpoint; every
// expected tensor must be present with a matching shape and no extras allowed.
void load_checkpoint(const std::filesystem::path& path, TrainState& state);
// Student parameters only, from a checkpoint written by save_checkpoint or by
// the RASA fold (which stores bare names only).
ParamStore load_student(const std::filesystem::path& path, const TrainConfig& cfg);
// Evaluation weights: the teacher when the checkpoint carries one, otherwise
// the bare-named parameters.
ParamStore load_model(const std::filesystem::path& path, const TrainConfig& cfg);

class MetricsLog {
public:
    MetricsLog(const std::filesystem::path& path, std::size_t levels, bool append = false);
    void write(const StepRecord& r);

private:
    std::ofstream out_;
    std::size_t levels_;
};

std::string metrics_header(std::size_t levels);
std::string format_metrics_row(const StepRecord& r);

struct TrainRunOptions {
    std::filesystem::path out_dir;  // empty: no files
    std::function<void(const StepRecord&)> on_step;
};

struct TrainRunResult {
    TrainState state;
    std::vector<StepRecord> records;
    std::vector<std::filesystem::path> artifacts;
};

// Full loop over cfg.steps steps. Step s draws its batch and augmentations
// from Rng(cfg.seed, 1).split(s).
TrainRunResult run_training(const TrainConfig& cfg, std::span<const Tensor> dataset, const TrainRunOptions& options = {});

// Teacher (or any) encoder features for whole images at the global resolution.
struct ImageFeatures {
    Tensor cls;      // [N, d]
    Tensor patches;  // [N, n, d]
    std::size_t rows = 0, cols = 0;
};
ImageFeatures extract_features(const TrainConfig& cfg, const ParamStore& params, std::span<const Tensor> images,
                               std::size_t chunk = 32);

// Parameter names under a prefix ("teacher." -> bare) as a standalone store.
ParamStore teacher_params(const TrainState& state);

}  // namespace franca
