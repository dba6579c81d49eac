#include "franca/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "franca/config.hpp"
#include "franca/formats.hpp"
#include "franca/gradient_suite.hpp"
#include "franca/masking.hpp"
#include "franca/ops.hpp"
#include "franca/probes.hpp"
#include "franca/rasa.hpp"
#include "franca/shapes.hpp"
#include "franca/trainer.hpp"

#ifndef FRANCA_BUILD_TAG
#define FRANCA_BUILD_TAG "unknown"
#endif

namespace franca {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* build_tag() { return FRANCA_BUILD_TAG; }

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class Manifest {
public:
    Manifest(std::string command, std::vector<std::string> argv, std::uint64_t seed)
        : command_(std::move(command)), argv_(std::move(argv)), seed_(seed), start_(utc_now()) {}

    json& config() { return config_; }
    void add(const fs::path& p) { outputs_.push_back(p.generic_string()); }
    void add(const std::vector<fs::path>& ps) {
        for (const auto& p : ps) add(p);
    }

    fs::path write(const fs::path& dir) const {
        json j;
        j["command"] = command_;
        j["argv"] = argv_;
        j["seed"] = seed_;
        j["config"] = config_;
        j["started"] = start_;
        j["finished"] = utc_now();
        j["outputs"] = outputs_;
        j["build"] = build_tag();
        write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
        return dir / "manifest.json";
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::uint64_t seed_;
    std::string start_;
    json config_ = json::object();
    std::vector<std::string> outputs_;
};

json config_json(const TrainConfig& cfg) {
    json j = json::object();
    for (const auto& k : config_keys()) j[k] = get_config_value(cfg, k);
    return j;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

// A dataset root holds train/ and test/ splits; a split holds manifest.csv.
fs::path resolve_split(const fs::path& p, const char* split) {
    if (fs::exists(p / "manifest.csv")) return p;
    if (fs::exists(p / split / "manifest.csv")) return p / split;
    if (fs::is_directory(p)) return p;
    throw UsageError("dataset not found: " + p.string());
}

struct LoadedImages {
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::vector<int>> patch_labels;  // empty without ground-truth maps
};

LoadedImages load_images(const fs::path& dir, std::size_t patch) {
    LoadedImages out;
    if (fs::exists(dir / "manifest.csv")) {
        ShapesDataset ds = load_shapes_split(dir, patch);
        for (std::size_t i = 0; i < ds.size(); ++i) out.patch_labels.push_back(ds.patch_labels(i));
        out.images = std::move(ds.images);
        out.labels = std::move(ds.labels);
    } else {
        ImageSet set = load_ppm_dir(dir);
        out.images = std::move(set.images);
        out.labels = std::move(set.labels);
    }
    return out;
}

TrainConfig config_for_checkpoint(const std::string& config_flag, const fs::path& checkpoint) {
    const fs::path path = config_flag.empty() ? checkpoint.parent_path() / "config.cfg" : fs::path(config_flag);
    require_file(path, "config file");
    return load_config(path);
}

std::vector<std::size_t> default_widths(std::size_t d) {
    std::vector<std::size_t> w;
    for (std::size_t m = d, i = 0; i < 5 && m > 0 && d % m == 0; m /= 2, ++i) w.insert(w.begin(), m);
    return w;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stoul(cell));
        } catch (const std::exception&) {
            throw UsageError("invalid width list '" + s + "'");
        }
    }
    return out;
}

std::vector<int> labels_of(const Tensor& t) {
    std::vector<int> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<int>(std::lround(t[i]));
    return out;
}

Tensor labels_tensor(const std::vector<int>& labels, Shape shape) {
    std::vector<double> v(labels.begin(), labels.end());
    return Tensor(std::move(shape), std::move(v));
}

fs::path write_report(const fs::path& dir, const std::string& name, const ProbeReport& r) {
    std::ostringstream os;
    r.write_csv(os);
    write_file_atomic(dir / name, os.str());
    return dir / name;
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t limit, std::uint64_t seed) {
    if (limit == 0 || limit >= n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    Rng rng(seed, 3);
    auto idx = sample_batch(n, limit, rng);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Tensor flatten_patches(const Tensor& patches) { return reshape(patches.detach(), {patches.rows(), patches.cols()}); }

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Self-supervised training with nested heads, balanced targets, cyclic masking and positional-bias removal"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    std::uint64_t seed = 0;
    std::string out_dir;
    std::size_t threads = 1;
    auto common = [&](CLI::App* sub, bool out_required) {
        sub->add_option("--seed", seed, "Random seed");
        auto* o = sub->add_option("--out", out_dir, "Output directory");
        if (out_required) o->required();
        sub->add_option("--threads", threads, "Worker thread budget")->check(CLI::PositiveNumber);
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the positioned-shapes dataset");
    ShapesConfig shapes;
    std::size_t train_count = 800, test_count = 400;
    common(gen, true);
    gen->add_option("--canvas", shapes.canvas, "Canvas side in pixels");
    gen->add_option("--patch", shapes.patch, "Patch size the canvas must divide into");
    gen->add_option("--classes", shapes.classes, "Number of shape classes (1-4)");
    gen->add_option("--shapes-per-image", shapes.shapes_per_image, "Shapes drawn per image");
    gen->add_option("--beta", shapes.beta, "Position bias: probability of the class quadrant");
    gen->add_option("--jitter", shapes.color_jitter, "Color jitter half-width");
    gen->add_option("--train-count", train_count, "Training images");
    gen->add_option("--test-count", test_count, "Test images");

    // train
    auto* train = app.add_subcommand("train", "Train student/teacher from a config file");
    std::string config_path, data_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flag_values;
    common(train, true);
    train->add_option("--config", config_path, "Config file (key = value)");
    train->add_option("--data", data_path, "Dataset root or split directory (overrides 'data')");
    const std::vector<std::pair<std::string, std::string>> train_flags{
        {"--steps", "steps"},          {"--batch-size", "batch_size"},   {"--lr", "lr"},
        {"--levels", "levels"},        {"--prototypes", "prototypes"},   {"--embed-dim", "embed_dim"},
        {"--depth", "depth"},          {"--mask-strategy", "mask_strategy"}, {"--micro-batch", "micro_batch"},
        {"--warmup-steps", "warmup_steps"}};
    for (const auto& [flag, key] : train_flags) {
        train->add_option(flag, flag_values[key], "Overrides config key '" + key + "'")
            ->default_str(get_config_value(TrainConfig{}, key));
    }
    train->add_option("--set", sets, "Extra overrides as key=value (repeatable)");

    // rasa
    auto* rasa = app.add_subcommand("rasa", "Remove positional planes and fold them into the final layer");
    std::string checkpoint;
    std::size_t max_iterations = 9, image_limit = 0;
    double patience = 0.01;
    FitOptions fit;
    common(rasa, true);
    rasa->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    rasa->add_option("--config", config_path, "Config file (default: config.cfg next to the checkpoint)");
    rasa->add_option("--data", data_path, "Held-out dataset root or split directory")->required();
    rasa->add_option("--max-iterations", max_iterations, "Maximum planes removed");
    rasa->add_option("--patience", patience, "Stop when the head beats the best-constant loss by less than this fraction");
    rasa->add_option("--epochs", fit.epochs, "Position-head epochs per iteration");
    rasa->add_option("--lr", fit.lr, "Position-head learning rate");
    rasa->add_option("--images", image_limit, "Use at most this many images (0: all)");

    // export-features
    auto* exp = app.add_subcommand("export-features", "Write CLS/patch features of a split as FeatureFiles");
    common(exp, true);
    exp->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    exp->add_option("--config", config_path, "Config file (default: config.cfg next to the checkpoint)");
    exp->add_option("--data", data_path, "Dataset split directory")->required();

    // probe-knn
    auto* knn = app.add_subcommand("probe-knn", "Slice-level cosine k-NN accuracy");
    std::string train_features, test_features, widths_arg;
    std::size_t k = 20;
    common(knn, true);
    knn->add_option("--train", train_features, "Exported features of the reference split")->required();
    knn->add_option("--test", test_features, "Exported features of the query split")->required();
    knn->add_option("-k,--k", k, "Neighbors");
    knn->add_option("--widths", widths_arg, "Comma-separated prefix widths (default: d/16 ... d)");

    // probe-entropy
    auto* ent = app.add_subcommand("probe-entropy", "Cluster-position entropy of a patch head");
    int level = -1;
    common(ent, true);
    ent->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    ent->add_option("--config", config_path, "Config file (default: config.cfg next to the checkpoint)");
    ent->add_option("--data", data_path, "Dataset split directory")->required();
    ent->add_option("--level", level, "Head level (-1: widest)");
    ent->add_option("--images", image_limit, "Use at most this many images (0: all)");

    // probe-overcluster
    auto* ovc = app.add_subcommand("probe-overcluster", "K-means overclustering mIoU with Hungarian matching");
    std::string features_dir;
    std::size_t clusters = 16, seed_count = 5, max_points = 0;
    common(ovc, true);
    ovc->add_option("--features", features_dir, "Exported features directory")->required();
    ovc->add_option("--clusters", clusters, "K");
    ovc->add_option("--seeds", seed_count, "Number of k-means seeds (seed, seed+1, ...)");
    ovc->add_option("--max-points", max_points, "Subsample patches (0: all)");

    // probe-pca
    auto* pca = app.add_subcommand("probe-pca", "PCA patch-feature RGB maps");
    std::size_t pca_images = 4, pca_scale = 8;
    common(pca, true);
    pca->add_option("--features", features_dir, "Exported features directory")->required();
    pca->add_option("--images", pca_images, "Images to render");
    pca->add_option("--scale", pca_scale, "Pixels per patch in the output");

    // grad-check
    auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every differentiable op");
    double tolerance = 1e-4;
    common(grad, false);
    grad->add_option("--tolerance", tolerance, "Maximum accepted relative error");

    // mask-stats
    auto* mstats = app.add_subcommand("mask-stats", "Per-cell visibility frequency of a masking strategy");
    std::string strategy = "cyclic";
    std::size_t rows = 8, cols = 8, samples = 100000;
    double ratio = 0.75;
    common(mstats, true);
    mstats->add_option("--strategy", strategy, "random | block | inverse_block | cyclic");
    mstats->add_option("--rows", rows, "Grid rows");
    mstats->add_option("--cols", cols, "Grid columns");
    mstats->add_option("--ratio", ratio, "Mask ratio");
    mstats->add_option("--samples", samples, "Monte-Carlo samples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }

    std::vector<std::string> args(argv, argv + argc);
    const fs::path outp = out_dir;
    try {
        if (*gen) {
            shapes.seed = seed;
            shapes.validate();
            Manifest man("gen-data", args, seed);
            man.config() = {{"canvas", shapes.canvas}, {"patch", shapes.patch}, {"classes", shapes.classes},
                            {"shapes_per_image", shapes.shapes_per_image}, {"beta", shapes.beta},
                            {"color_jitter", shapes.color_jitter}, {"train_count", train_count},
                            {"test_count", test_count}};
            ShapesDataset tr = generate_shapes(shapes, train_count, 0);
            ShapesDataset te = generate_shapes(shapes, test_count, 1);
            man.add(write_shapes_split(outp / "train", tr));
            man.add(write_shapes_split(outp / "test", te));
            man.write(outp);
            out << "wrote " << train_count << " train and " << test_count << " test images to " << outp.string() << "\n";
            return 0;
        }
        if (*train) {
            TrainConfig cfg;
            if (!config_path.empty()) {
                require_file(config_path, "config file");
                cfg = load_config(config_path);
            }
            for (const auto& [key, value] : flag_values)
                if (!value.empty()) set_config_value(cfg, key, value);
            for (const auto& s : sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
                set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
            }
            // A shorter run requested on the command line shortens the warmup with it.
            const bool warmup_given = !flag_values["warmup_steps"].empty() ||
                                      std::any_of(sets.begin(), sets.end(),
                                                  [](const std::string& s) { return s.rfind("warmup_steps=", 0) == 0; });
            if (!flag_values["steps"].empty() && !warmup_given && cfg.warmup_steps > cfg.steps) {
                err << "note: warmup_steps reduced from " << cfg.warmup_steps << " to " << cfg.steps << "\n";
                cfg.warmup_steps = cfg.steps;
            }
            if (train->count("--seed")) cfg.seed = seed;
            if (train->count("--threads")) cfg.threads = threads;
            if (!data_path.empty()) cfg.data = data_path;
            if (cfg.data.empty()) throw UsageError("no dataset: pass --data or set 'data' in the config");
            cfg.validate();
            const LoadedImages data = load_images(resolve_split(cfg.data, "train"), cfg.patch_size);
            Manifest man("train", args, cfg.seed);
            man.config() = config_json(cfg);
            TrainRunOptions opts;
            opts.out_dir = outp;
            const TrainRunResult res = run_training(cfg, data.images, opts);
            man.add(res.artifacts);
            man.write(outp);
            out << "trained " << cfg.steps << " steps; final total loss " << res.records.back().total_loss << "\n";
            return 0;
        }
        if (*rasa) {
            require_file(checkpoint, "checkpoint");
            const TrainConfig cfg = config_for_checkpoint(config_path, checkpoint);
            const LoadedImages data = load_images(resolve_split(data_path, "test"), cfg.patch_size);
            ParamStore model = load_model(checkpoint, cfg);
            std::vector<Tensor> imgs;
            for (auto i : subsample(data.images.size(), image_limit, seed)) imgs.push_back(data.images[i]);
            const ImageFeatures f = extract_features(cfg, model, imgs);
            const RASAState st = rasa_iterate(flatten_patches(f.patches), patch_coordinates(f.rows, f.cols, imgs.size()),
                                              max_iterations, patience, fit);
            auto [w, b] = fold_into_linear(model.at(kEncoderOutWeight), model.at(kEncoderOutBias), st);
            std::copy(w.data().begin(), w.data().end(), model.at(kEncoderOutWeight).mutable_data().begin());
            std::copy(b.data().begin(), b.data().end(), model.at(kEncoderOutBias).mutable_data().begin());
            NamedTensors folded;
            for (const auto& [name, t] : model) folded.emplace(name, t.detach());
            Manifest man("rasa", args, seed);
            man.config() = config_json(cfg);
            man.config()["max_iterations"] = max_iterations;
            man.config()["patience"] = patience;
            man.config()["epochs"] = fit.epochs;
            man.config()["lr"] = fit.lr;
            write_checkpoint(outp / "folded.frck", folded);
            write_file_atomic(outp / "config.cfg", config_to_text(cfg));
            std::ostringstream rep;
            st.write_report(rep);
            write_file_atomic(outp / "rasa_report.csv", rep.str());
            write_feature_file(outp / "rasa_transform.frnk", st.transform_tensor());
            man.add({outp / "folded.frck", outp / "config.cfg", outp / "rasa_report.csv", outp / "rasa_transform.frnk"});
            man.write(outp);
            out << "removed " << st.iterations() << " planes (" << st.stop_reason << "); baseline L_pos "
                << st.baseline_loss << "\n";
            return 0;
        }
        if (*exp) {
            require_file(checkpoint, "checkpoint");
            const TrainConfig cfg = config_for_checkpoint(config_path, checkpoint);
            const LoadedImages data = load_images(resolve_split(data_path, "test"), cfg.patch_size);
            const ImageFeatures f = extract_features(cfg, load_model(checkpoint, cfg), data.images);
            Manifest man("export-features", args, seed);
            man.config() = config_json(cfg);
            write_feature_file(outp / "cls.frnk", f.cls);
            write_feature_file(outp / "patches.frnk", f.patches);
            write_feature_file(outp / "labels.frnk", labels_tensor(data.labels, {data.labels.size()}));
            man.add({outp / "cls.frnk", outp / "patches.frnk", outp / "labels.frnk"});
            if (!data.patch_labels.empty()) {
                std::vector<int> flat;
                for (const auto& p : data.patch_labels) flat.insert(flat.end(), p.begin(), p.end());
                write_feature_file(outp / "patch_labels.frnk",
                                   labels_tensor(flat, {data.patch_labels.size(), data.patch_labels.front().size()}));
                man.add(outp / "patch_labels.frnk");
            }
            man.write(outp);
            out << "exported " << data.images.size() << " images\n";
            return 0;
        }
        if (*knn) {
            require_file(fs::path(train_features) / "cls.frnk", "feature file");
            require_file(fs::path(test_features) / "cls.frnk", "feature file");
            const Tensor tr = read_feature_file(fs::path(train_features) / "cls.frnk");
            const Tensor te = read_feature_file(fs::path(test_features) / "cls.frnk");
            const auto trl = labels_of(read_feature_file(fs::path(train_features) / "labels.frnk"));
            const auto tel = labels_of(read_feature_file(fs::path(test_features) / "labels.frnk"));
            const auto widths = widths_arg.empty() ? default_widths(tr.cols()) : parse_widths(widths_arg);
            const auto res = knn_classify(tr, trl, te, tel, k, widths);
            ProbeReport r;
            r.probe = "knn";
            r.seed = seed;
            r.params = {{"k", std::to_string(k)}};
            r.feature_files = {(fs::path(train_features) / "cls.frnk").generic_string(),
                               (fs::path(test_features) / "cls.frnk").generic_string()};
            for (const auto& x : res) {
                r.metrics.push_back({"accuracy@" + std::to_string(x.width), x.accuracy, x.count});
                out << "width " << x.width << ": accuracy " << x.accuracy << "\n";
            }
            Manifest man("probe-knn", args, seed);
            man.config() = {{"k", k}, {"widths", widths}};
            man.add(write_report(outp, "probe_knn.csv", r));
            man.write(outp);
            return 0;
        }
        if (*ent) {
            require_file(checkpoint, "checkpoint");
            const TrainConfig cfg = config_for_checkpoint(config_path, checkpoint);
            const HeadBankConfig bank = cfg.head_bank();
            const std::size_t lv = level < 0 ? bank.levels() - 1 : static_cast<std::size_t>(level);
            const LoadedImages data = load_images(resolve_split(data_path, "test"), cfg.patch_size);
            const ParamStore model = load_model(checkpoint, cfg);
            std::vector<Tensor> imgs;
            for (auto i : subsample(data.images.size(), image_limit, seed)) imgs.push_back(data.images[i]);
            const ImageFeatures f = extract_features(cfg, model, imgs);
            const auto assign = cluster_assignments(bank, model, lv, flatten_patches(f.patches));
            const EntropyReport e = cluster_position_entropy(assign, f.rows * f.cols, bank.prototypes_at(lv));
            ProbeReport r;
            r.probe = "entropy";
            r.seed = seed;
            r.params = {{"level", std::to_string(lv)}, {"checkpoint", checkpoint}};
            r.metrics.push_back({"mean_entropy", e.mean, e.active});
            r.metrics.push_back({"max_entropy", std::log(static_cast<double>(f.rows * f.cols)), f.rows * f.cols});
            r.metrics.push_back({"active_clusters", static_cast<double>(e.active), assign.size()});
            Manifest man("probe-entropy", args, seed);
            man.config() = config_json(cfg);
            man.add(write_report(outp, "probe_entropy.csv", r));
            man.write(outp);
            out << "mean entropy " << e.mean << " over " << e.active << " clusters\n";
            return 0;
        }
        if (*ovc) {
            require_file(fs::path(features_dir) / "patches.frnk", "feature file");
            require_file(fs::path(features_dir) / "patch_labels.frnk", "patch label file");
            const Tensor patches = read_feature_file(fs::path(features_dir) / "patches.frnk");
            const auto labels = labels_of(read_feature_file(fs::path(features_dir) / "patch_labels.frnk"));
            const Tensor flat = flatten_patches(patches);
            const auto idx = subsample(flat.rows(), max_points, seed);
            const Tensor pts = gather_rows(flat, idx);
            std::vector<int> cls;
            for (auto i : idx) cls.push_back(labels[i]);
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(seed + i);
            const OverclusterResult res = overcluster_miou(pts, cls, clusters, seeds);
            ProbeReport r;
            r.probe = "overcluster";
            r.seed = seed;
            r.params = {{"k", std::to_string(clusters)}, {"seeds", std::to_string(seed_count)}};
            r.feature_files = {(fs::path(features_dir) / "patches.frnk").generic_string()};
            r.metrics.push_back({"miou_mean", res.mean, res.points});
            r.metrics.push_back({"miou_std", res.stddev, res.per_seed.size()});
            Manifest man("probe-overcluster", args, seed);
            man.config() = {{"clusters", clusters}, {"seeds", seed_count}, {"max_points", max_points}};
            man.add(write_report(outp, "probe_overcluster.csv", r));
            man.write(outp);
            out << "mIoU " << res.mean << " +- " << res.stddev << "\n";
            return 0;
        }
        if (*pca) {
            require_file(fs::path(features_dir) / "patches.frnk", "feature file");
            const Tensor patches = read_feature_file(fs::path(features_dir) / "patches.frnk");
            if (patches.ndim() != 3) throw UsageError("patches.frnk must be [N, n, d]");
            const std::size_t n = patches.dim(1), d = patches.dim(2);
            const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
            if (side * side != n) throw UsageError("patch count is not a square grid");
            Manifest man("probe-pca", args, seed);
            man.config() = {{"images", pca_images}, {"scale", pca_scale}};
            ProbeReport r;
            r.probe = "pca";
            r.seed = seed;
            r.feature_files = {(fs::path(features_dir) / "patches.frnk").generic_string()};
            for (std::size_t i = 0; i < std::min(pca_images, patches.dim(0)); ++i) {
                const Tensor one = Tensor({n, d}, std::vector<double>(patches.data().begin() + static_cast<std::ptrdiff_t>(i * n * d),
                                                                      patches.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n * d)));
                const PcaImage img = pca_patch_rgb(one, side, side);
                const fs::path p = outp / ("pca_" + std::to_string(i) + ".ppm");
                write_pca_ppm(p, img, pca_scale);
                man.add(p);
                const auto fg = static_cast<double>(std::count(img.foreground.begin(), img.foreground.end(), 1));
                r.metrics.push_back({"foreground_fraction_" + std::to_string(i), fg / static_cast<double>(n), n});
            }
            man.add(write_report(outp, "probe_pca.csv", r));
            man.write(outp);
            out << "rendered " << std::min(pca_images, patches.dim(0)) << " images\n";
            return 0;
        }
        if (*grad) {
            const GradSuiteReport rep = run_gradient_suite(seed);
            for (const auto& e : rep.entries) out << e.name << ": " << e.result.describe() << "\n";
            out << "max_rel_error=" << rep.max_rel_error << " (" << rep.worst << ") in " << rep.seconds << " s\n";
            if (!out_dir.empty()) {
                ProbeReport r;
                r.probe = "grad-check";
                r.seed = seed;
                for (const auto& e : rep.entries) r.metrics.push_back({e.name, e.result.max_rel_error, e.result.coordinates});
                Manifest man("grad-check", args, seed);
                man.config() = {{"tolerance", tolerance}};
                man.add(write_report(outp, "grad_check.csv", r));
                man.write(outp);
            }
            return rep.max_rel_error < tolerance ? 0 : 2;
        }
        if (*mstats) {
            MaskStrategy s;
            try {
                s = parse_mask_strategy(strategy);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            Rng rng(seed);
            const CoverageStats st = coverage_stats(s, rows, cols, ratio, samples, rng);
            std::ostringstream csv;
            st.write_csv(csv);
            write_file_atomic(outp / "coverage.csv", csv.str());
            Manifest man("mask-stats", args, seed);
            man.config() = {{"strategy", to_string(s)}, {"rows", rows}, {"cols", cols}, {"ratio", ratio}, {"samples", samples}};
            man.add(outp / "coverage.csv");
            man.write(outp);
            out << "max deviation " << st.max_deviation << "\n";
            return 0;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    err << app.help();
    return 1;
}

}  // namespace franca
