#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "franca/augment.hpp"
#include "franca/encoder.hpp"
#include "franca/heads.hpp"
#include "franca/masking.hpp"

namespace franca {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
    // model
    std::size_t image_size = 64;
    std::size_t local_size = 32;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    double mlp_ratio = 2.0;
    double drop_path = 0.0;
    std::size_t levels = 5;
    std::size_t prototypes = 256;
    bool patch_nesting = true;

    // views
    std::size_t global_crops = 2;
    std::size_t local_crops = 2;
    double global_scale_min = 0.48;
    double global_scale_max = 1.0;
    double local_scale_min = 0.05;
    double local_scale_max = 0.48;
    double flip_prob = 0.5;
    double brightness = 0.2;
    double contrast = 0.2;

    // optimization
    std::size_t steps = 500;
    std::size_t batch_size = 16;
    std::size_t micro_batch = 0;  // images per tape; 0 means the whole batch
    double lr = 2e-3;
    double min_lr = 1e-5;
    std::size_t warmup_steps = 50;
    double weight_decay = 0.04;
    double student_temp = 0.1;
    double teacher_temp_start = 0.04;
    double teacher_temp_end = 0.07;
    double momentum_start = 0.992;
    double momentum_end = 1.0;
    MaskStrategy mask_strategy = MaskStrategy::cyclic;
    double mask_ratio_min = 0.1;
    double mask_ratio_max = 0.5;
    std::size_t sk_iterations = 3;
    double patch_weight = 1.0;

    // run
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    std::string data;                  // dataset split directory

    void validate() const;
    EncoderConfig encoder() const;
    HeadBankConfig head_bank() const;
    CropConfig crops() const;
};

std::vector<std::string> config_keys();
// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& cfg, const std::string& key);

// "key = value" lines; '#' starts a comment; blank lines are ignored.
TrainConfig parse_config(const std::string& text, const TrainConfig& base = {}, const std::string& origin = "<config>");
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});
// Every key, in config_keys() order; parse_config(config_to_text(c)) == c.
std::string config_to_text(const TrainConfig& cfg);

}  // namespace franca
