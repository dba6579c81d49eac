#include "franca/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

namespace franca {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed shares the unsigned field parser");

using Member = std::variant<std::size_t TrainConfig::*, double TrainConfig::*, bool TrainConfig::*,
                            std::string TrainConfig::*, MaskStrategy TrainConfig::*>;

struct Field {
    const char* key;
    Member member;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        {"image_size", &TrainConfig::image_size},
        {"local_size", &TrainConfig::local_size},
        {"patch_size", &TrainConfig::patch_size},
        {"embed_dim", &TrainConfig::embed_dim},
        {"depth", &TrainConfig::depth},
        {"heads", &TrainConfig::heads},
        {"mlp_ratio", &TrainConfig::mlp_ratio},
        {"drop_path", &TrainConfig::drop_path},
        {"levels", &TrainConfig::levels},
        {"prototypes", &TrainConfig::prototypes},
        {"patch_nesting", &TrainConfig::patch_nesting},
        {"global_crops", &TrainConfig::global_crops},
        {"local_crops", &TrainConfig::local_crops},
        {"global_scale_min", &TrainConfig::global_scale_min},
        {"global_scale_max", &TrainConfig::global_scale_max},
        {"local_scale_min", &TrainConfig::local_scale_min},
        {"local_scale_max", &TrainConfig::local_scale_max},
        {"flip_prob", &TrainConfig::flip_prob},
        {"brightness", &TrainConfig::brightness},
        {"contrast", &TrainConfig::contrast},
        {"steps", &TrainConfig::steps},
        {"batch_size", &TrainConfig::batch_size},
        {"micro_batch", &TrainConfig::micro_batch},
        {"lr", &TrainConfig::lr},
        {"min_lr", &TrainConfig::min_lr},
        {"warmup_steps", &TrainConfig::warmup_steps},
        {"weight_decay", &TrainConfig::weight_decay},
        {"student_temp", &TrainConfig::student_temp},
        {"teacher_temp_start", &TrainConfig::teacher_temp_start},
        {"teacher_temp_end", &TrainConfig::teacher_temp_end},
        {"momentum_start", &TrainConfig::momentum_start},
        {"momentum_end", &TrainConfig::momentum_end},
        {"mask_strategy", &TrainConfig::mask_strategy},
        {"mask_ratio_min", &TrainConfig::mask_ratio_min},
        {"mask_ratio_max", &TrainConfig::mask_ratio_max},
        {"sk_iterations", &TrainConfig::sk_iterations},
        {"patch_weight", &TrainConfig::patch_weight},
        {"seed", &TrainConfig::seed},
        {"threads", &TrainConfig::threads},
        {"checkpoint_every", &TrainConfig::checkpoint_every},
        {"data", &TrainConfig::data},
    };
    return f;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    encoder().validate();
    head_bank().validate();
    crops().validate();
    if (steps == 0) throw ConfigError("steps must be at least 1");
    if (warmup_steps > steps) throw ConfigError("warmup_steps must not exceed steps");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(lr >= 0.0) || !(min_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(student_temp > 0.0) || !(teacher_temp_start > 0.0) || !(teacher_temp_end > 0.0))
        throw ConfigError("temperatures must be positive");
    auto momentum_ok = [](double m) { return m > 0.0 && m <= 1.0; };
    if (!momentum_ok(momentum_start) || !momentum_ok(momentum_end)) throw ConfigError("EMA momentum must lie in (0, 1]");
    if (!(mask_ratio_min >= 0.0 && mask_ratio_min <= mask_ratio_max && mask_ratio_max <= 1.0))
        throw ConfigError("mask ratios must satisfy 0 <= min <= max <= 1");
    if (sk_iterations == 0) throw ConfigError("sk_iterations must be at least 1");
    if (!(patch_weight >= 0.0)) throw ConfigError("patch_weight must be non-negative");
    if (threads == 0) throw ConfigError("threads must be at least 1");
}

EncoderConfig TrainConfig::encoder() const {
    EncoderConfig e;
    e.image_size = image_size;
    e.crop_sizes = {image_size};
    if (local_crops > 0) e.crop_sizes.push_back(local_size);
    e.patch_size = patch_size;
    e.embed_dim = embed_dim;
    e.depth = depth;
    e.heads = heads;
    e.mlp_ratio = mlp_ratio;
    e.drop_path = drop_path;
    return e;
}

HeadBankConfig TrainConfig::head_bank() const {
    if (levels == 0) throw ConfigError("levels must be at least 1");
    HeadBankConfig h = HeadBankConfig::matryoshka(embed_dim, levels, prototypes);
    h.patch_nesting = patch_nesting;
    return h;
}

CropConfig TrainConfig::crops() const {
    CropConfig c;
    c.global_count = global_crops;
    c.global_size = image_size;
    c.local_count = local_crops;
    c.local_size = local_size;
    c.global_scale_min = global_scale_min;
    c.global_scale_max = global_scale_max;
    c.local_scale_min = local_scale_min;
    c.local_scale_max = local_scale_max;
    c.flip_prob = flip_prob;
    c.brightness = brightness;
    c.contrast = contrast;
    return c;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.emplace_back(f.key);
    return keys;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = find_field(key);
    std::visit(
        [&](auto member) {
            using T = std::remove_cvref_t<decltype(cfg.*member)>;
            if constexpr (std::is_same_v<T, std::size_t>) {
                cfg.*member = parse_integer<T>(key, value);
            } else if constexpr (std::is_same_v<T, double>) {
                cfg.*member = parse_double(key, value);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true" || value == "1") cfg.*member = true;
                else if (value == "false" || value == "0") cfg.*member = false;
                else throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
            } else if constexpr (std::is_same_v<T, MaskStrategy>) {
                try {
                    cfg.*member = parse_mask_strategy(value);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError("config key '" + key + "': " + e.what());
                }
            } else {
                cfg.*member = value;
            }
        },
        f.member);
}

std::string get_config_value(const TrainConfig& cfg, const std::string& key) {
    const Field& f = find_field(key);
    return std::visit(
        [&](auto member) -> std::string {
            using T = std::remove_cvref_t<decltype(cfg.*member)>;
            if constexpr (std::is_same_v<T, std::size_t>) {
                return std::to_string(cfg.*member);
            } else if constexpr (std::is_same_v<T, double>) {
                return format_double(cfg.*member);
            } else if constexpr (std::is_same_v<T, bool>) {
                return cfg.*member ? "true" : "false";
            } else if constexpr (std::is_same_v<T, MaskStrategy>) {
                return to_string(cfg.*member);
            } else {
                return cfg.*member;
            }
        },
        f.member);
}

TrainConfig parse_config(const std::string& text, const TrainConfig& base, const std::string& origin) {
    TrainConfig cfg = base;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base, path.string());
}

std::string config_to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + get_config_value(cfg, f.key) + "\n";
    return out;
}

}  // namespace franca
