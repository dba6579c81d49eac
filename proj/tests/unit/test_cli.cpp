#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "franca/cli.hpp"
#include "franca/gradient_suite.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "franca");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = franca::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("franca_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_tiny_config(const fs::path& path) {
    std::ofstream(path) << "image_size = 16\nlocal_size = 8\npatch_size = 4\nembed_dim = 16\ndepth = 1\n"
                           "heads = 2\nlevels = 2\nprototypes = 16\nlocal_crops = 2\nbatch_size = 4\n"
                           "steps = 10\nwarmup_steps = 2\n";
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code != 0);
    CHECK(run({"no-such-command"}).code == 1);
    CHECK(run({"probe-knn", "--bogus"}).code == 1);
    auto missing = run({"probe-knn", "--train", "/nonexistent/a", "--test", "/nonexistent/b", "--out",
                        scratch("missing").string()});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("/nonexistent/a") != std::string::npos);
}

TEST_CASE("help lists defaults") {
    auto h = run({"mask-stats", "--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("--samples") != std::string::npos);
    CHECK(h.out.find("100000") != std::string::npos);
    CHECK(run({"train", "--help"}).out.find("--steps") != std::string::npos);
}

TEST_CASE("mask-stats writes coverage and a manifest") {
    auto dir = scratch("mask");
    auto r = run({"mask-stats", "--rows", "4", "--cols", "4", "--samples", "2000", "--out", dir.string(), "--seed", "5"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "coverage.csv"));
    auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m["command"] == "mask-stats");
    CHECK(m["seed"] == 5);
    CHECK(m.contains("build"));
    CHECK(m["outputs"].size() >= 1);
    auto dir2 = scratch("mask2");
    run({"mask-stats", "--rows", "4", "--cols", "4", "--samples", "2000", "--out", dir2.string(), "--seed", "5"});
    CHECK(slurp(dir / "coverage.csv") == slurp(dir2 / "coverage.csv"));
}

TEST_CASE("end-to-end pipeline on a tiny dataset") {
    auto dir = scratch("e2e");
    REQUIRE(run({"gen-data", "--canvas", "16", "--patch", "4", "--train-count", "24", "--test-count", "12", "--out",
                 (dir / "data").string()})
                .code == 0);
    write_tiny_config(dir / "tiny.cfg");
    auto t1 = run({"train", "--config", (dir / "tiny.cfg").string(), "--data", (dir / "data").string(), "--out",
                   (dir / "run1").string(), "--steps", "10", "--seed", "42"});
    REQUIRE(t1.code == 0);
    auto t2 = run({"train", "--config", (dir / "tiny.cfg").string(), "--data", (dir / "data").string(), "--out",
                   (dir / "run2").string(), "--steps", "10", "--seed", "42"});
    REQUIRE(t2.code == 0);
    CHECK(slurp(dir / "run1" / "metrics.csv") == slurp(dir / "run2" / "metrics.csv"));
    CHECK(fs::exists(dir / "run1" / "checkpoint.frck"));

    const auto ckpt = (dir / "run1" / "checkpoint.frck").string();
    REQUIRE(run({"export-features", "--checkpoint", ckpt, "--data", (dir / "data" / "train").string(), "--out",
                 (dir / "ftrain").string()})
                .code == 0);
    REQUIRE(run({"export-features", "--checkpoint", ckpt, "--data", (dir / "data" / "test").string(), "--out",
                 (dir / "ftest").string()})
                .code == 0);
    auto knn = run({"probe-knn", "--train", (dir / "ftrain").string(), "--test",
                    (dir / "ftest").string(), "-k", "3", "--widths", "8,16", "--out",
                    (dir / "knn").string()});
    REQUIRE(knn.code == 0);
    CHECK(slurp(dir / "knn" / "probe_knn.csv").find("accuracy@8") != std::string::npos);

    auto ent = run({"probe-entropy", "--checkpoint", ckpt, "--data", (dir / "data" / "test").string(), "--out",
                    (dir / "ent").string()});
    CHECK(ent.code == 0);
    auto rasa = run({"rasa", "--checkpoint", ckpt, "--data", (dir / "data" / "train").string(), "--max-iterations",
                     "2", "--epochs", "20", "--out", (dir / "rasa").string()});
    REQUIRE(rasa.code == 0);
    CHECK(fs::exists(dir / "rasa" / "folded.frck"));
    CHECK(run({"export-features", "--checkpoint", (dir / "rasa" / "folded.frck").string(), "--data",
               (dir / "data" / "test").string(), "--out", (dir / "frasa").string()})
              .code == 0);
    CHECK(run({"probe-overcluster", "--features", (dir / "ftest").string(), "--clusters", "4",
               "--seeds", "2", "--out", (dir / "ovc").string()})
              .code == 0);
    CHECK(run({"probe-pca", "--features", (dir / "ftest").string(), "--images", "2", "--out",
               (dir / "pca").string()})
              .code == 0);
    CHECK(fs::exists(dir / "pca" / "pca_0.ppm"));
    fs::remove_all(dir);
}

TEST_CASE("invalid config values are usage errors") {
    auto dir = scratch("badcfg");
    std::ofstream(dir / "bad.cfg") << "steps = 10\nwarmup_steps = 20\n";
    auto r = run({"train", "--config", (dir / "bad.cfg").string(), "--data", (dir / "nodata").string(), "--out",
                  (dir / "run").string()});
    CHECK(r.code == 1);
}

TEST_CASE("gradient suite stays below tolerance") {
    auto report = franca::run_gradient_suite(7);
    CHECK(report.entries.size() > 10);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad-check and missing config") {
    auto g = run({"grad-check"});
    CHECK(g.code == 0);
    CHECK(g.out.find("max_rel_error=") != std::string::npos);
    auto m = run({"train", "--config", "/nonexistent/run.cfg", "--out", scratch("nocfg").string()});
    CHECK(m.code == 1);
    CHECK(m.err.find("/nonexistent/run.cfg") != std::string::npos);
}
