#include <cmath>
#include <filesystem>
#include <fstream>

#include "franca/trainer.hpp"
#include "helpers.hpp"
#include "tiny.hpp"

using namespace franca;
using testutil::tiny_config;
using testutil::tiny_shapes;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("franca_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::vector<double>> snapshot(const ParamStore& p) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [k, v] : p) out[k] = v.to_vector();
    return out;
}

std::vector<Tensor> batch_of(const ShapesDataset& ds, std::size_t n) {
    return {ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

TEST_CASE("cosine schedule") {
    CHECK(cosine_schedule(10, 110, 10, 2.0, 0.0) == doctest::Approx(2.0));
    CHECK(cosine_schedule(110, 110, 10, 2.0, 0.5) == doctest::Approx(0.5));
    CHECK(cosine_schedule(60, 110, 10, 2.0, 0.5) == doctest::Approx(1.25));
    CHECK(cosine_schedule(0, 110, 10, 2.0, 0.5) == 0.0);
    CHECK(cosine_schedule(5, 110, 10, 2.0, 0.5) == doctest::Approx(1.0));
    for (std::size_t s = 11; s <= 110; ++s) CHECK(cosine_schedule(s, 110, 10, 2.0, 0.5) <= cosine_schedule(s - 1, 110, 10, 2.0, 0.5));
}

TEST_CASE("ema_update arithmetic") {
    ParamStore t, s;
    t.add("a", Tensor::of({1}, {1.0}));
    s.add("a", Tensor::of({1}, {0.0}));
    {
        PrecisionScope p(Precision::f64);
        ema_update(t, s, 0.9);
    }
    CHECK(t.at("a")[0] == doctest::Approx(0.9));
    ema_update(t, s, 1.0);
    CHECK(t.at("a")[0] == doctest::Approx(0.9));
    ema_update(t, s, 0.0);
    CHECK(t.at("a")[0] == 0.0);
    ParamStore bad;
    bad.add("a", Tensor::of({2}, {0.0, 1.0}));
    CHECK_THROWS_AS(ema_update(t, bad, 0.5), ShapeError);
}

TEST_CASE("loss history ring") {
    LossHistory h(3);
    for (double v : {1.0, 2.0, 3.0, 4.0}) h.push(v);
    CHECK(h.size() == 3);
    CHECK(h.mean() == doctest::Approx(3.0));
}

TEST_CASE("frozen teacher with momentum one") {
    auto cfg = tiny_config();
    cfg.momentum_start = cfg.momentum_end = 1.0;
    auto ds = tiny_shapes();
    auto state = init_state(cfg);
    const auto before = snapshot(state.teacher);
    Rng rng(1);
    auto imgs = batch_of(ds, 4);
    for (int i = 0; i < 3; ++i) train_step(state, cfg, imgs, rng);
    CHECK(snapshot(state.teacher) == before);
    CHECK(snapshot(state.student) != before);
    CHECK(state.step == 3);
}

TEST_CASE("zero learning rate leaves the student unchanged") {
    auto cfg = tiny_config();
    cfg.lr = 0.0;
    cfg.min_lr = 0.0;
    auto ds = tiny_shapes();
    auto state = init_state(cfg);
    const auto before = snapshot(state.student);
    Rng rng(2);
    auto imgs = batch_of(ds, 4);
    for (int i = 0; i < 3; ++i) {
        auto rec = train_step(state, cfg, imgs, rng);
        CHECK(std::isfinite(rec.total_loss));
    }
    CHECK(snapshot(state.student) == before);
}

TEST_CASE("step records: non-negative levels summing to the total, teacher without gradient") {
    auto cfg = tiny_config();
    auto ds = tiny_shapes();
    auto state = init_state(cfg);
    Rng rng(3);
    auto imgs = batch_of(ds, 4);
    for (int i = 0; i < 3; ++i) {
        auto rec = train_step(state, cfg, imgs, rng);
        REQUIRE(rec.level_loss.size() == 2);
        double s = 0.0;
        for (double v : rec.level_loss) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(rec.total_loss == s);
        for (const auto& [name, t] : state.teacher) {
            CHECK_FALSE(t.requires_grad());
            CHECK_FALSE(t.has_grad());
        }
    }
}

TEST_CASE("micro-batching and threads do not change the step") {
    auto cfg = tiny_config();
    auto ds = tiny_shapes();
    auto imgs = batch_of(ds, 4);
    auto a = init_state(cfg);
    Rng ra(4);
    auto ra_rec = train_step(a, cfg, imgs, ra);
    auto split = cfg;
    split.micro_batch = 1;
    split.threads = 3;
    auto b = init_state(split);
    Rng rb(4);
    auto rb_rec = train_step(b, split, imgs, rb);
    CHECK(rb_rec.total_loss == doctest::Approx(ra_rec.total_loss).epsilon(1e-6));
    for (const auto& [name, t] : a.student)
        CHECK(testutil::max_abs_diff(t.data(), b.student.at(name).data()) < 1e-5);
}

TEST_CASE("single-level configuration trains only the full-width head") {
    auto cfg = tiny_config();
    cfg.levels = 1;
    auto state = init_state(cfg);
    CHECK_FALSE(state.student.contains("head.cls.1.proto"));
    CHECK(state.student.at("head.cls.0.fc0.w").shape()[0] == 16);
    auto ds = tiny_shapes();
    Rng rng(5);
    auto rec = train_step(state, cfg, batch_of(ds, 4), rng);
    REQUIRE(rec.level_loss.size() == 1);
    CHECK(rec.total_loss == rec.level_loss[0]);
}

TEST_CASE("prototype rows stay unit-norm after steps") {
    auto cfg = tiny_config();
    auto state = init_state(cfg);
    auto ds = tiny_shapes();
    Rng rng(6);
    for (int i = 0; i < 3; ++i) train_step(state, cfg, batch_of(ds, 4), rng);
    for (const auto& [name, t] : state.student) {
        if (!name.ends_with(".proto")) continue;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            double ss = 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) ss += t[r * t.cols() + j] * t[r * t.cols() + j];
            CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("non-finite loss aborts with a per-level dump") {
    auto cfg = tiny_config();
    auto state = init_state(cfg);
    for (auto& v : state.student.at("encoder.patch.w").mutable_data()) v = NAN;
    auto ds = tiny_shapes();
    Rng rng(7);
    try {
        train_step(state, cfg, batch_of(ds, 4), rng);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("level_0") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip restores the full state") {
    auto dir = scratch("ckpt");
    auto cfg = tiny_config();
    auto state = init_state(cfg);
    auto ds = tiny_shapes();
    Rng rng(8);
    for (int i = 0; i < 2; ++i) train_step(state, cfg, batch_of(ds, 4), rng);
    save_checkpoint(dir / "a.frck", state);
    auto other = init_state(cfg);
    load_checkpoint(dir / "a.frck", other);
    CHECK(snapshot(other.student) == snapshot(state.student));
    CHECK(snapshot(other.teacher) == snapshot(state.teacher));
    CHECK(other.optimizer.m == state.optimizer.m);
    CHECK(other.optimizer.v == state.optimizer.v);
    CHECK(other.optimizer.step == state.optimizer.step);
    CHECK(other.step == state.step);

    // Continuing from the loaded state matches continuing in memory.
    Rng r1(9), r2(9);
    train_step(state, cfg, batch_of(ds, 4), r1);
    train_step(other, cfg, batch_of(ds, 4), r2);
    CHECK(snapshot(other.student) == snapshot(state.student));

    auto named = read_checkpoint(dir / "a.frck");
    auto node = named.extract("encoder.patch.w");
    node.key() = "encoder.patch.weight";
    named.insert(std::move(node));
    write_checkpoint(dir / "renamed.frck", named);
    auto fresh = init_state(cfg);
    try {
        load_checkpoint(dir / "renamed.frck", fresh);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("encoder.patch.w") != std::string::npos);
    }
    auto wide = cfg;
    wide.embed_dim = 32;
    auto mismatch = init_state(wide);
    CHECK_THROWS_AS(load_checkpoint(dir / "a.frck", mismatch), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("ten-step runs are bit-reproducible") {
    auto cfg = tiny_config();
    auto ds = tiny_shapes();
    auto a = scratch("run_a"), b = scratch("run_b");
    auto ra = run_training(cfg, ds.images, {a, {}});
    auto rb = run_training(cfg, ds.images, {b, {}});
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "checkpoint.frck") == slurp(b / "checkpoint.frck"));
    CHECK(ra.records.size() == 10);
    auto other = cfg;
    other.seed = 4;
    auto rc = run_training(other, ds.images);
    CHECK(rc.records.back().total_loss != ra.records.back().total_loss);
    const auto header = slurp(a / "metrics.csv");
    CHECK(header.rfind("step,total_loss,loss_level_0,loss_level_1,lr,ema_momentum,teacher_temp\n", 0) == 0);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("load_model prefers the teacher") {
    auto dir = scratch("model");
    auto cfg = tiny_config();
    auto ds = tiny_shapes();
    auto res = run_training(cfg, ds.images, {dir, {}});
    auto model = load_model(dir / "checkpoint.frck", cfg);
    auto teacher = teacher_params(res.state);
    CHECK(snapshot(model) == snapshot(teacher));
    auto student = load_student(dir / "checkpoint.frck", cfg);
    CHECK(snapshot(student) == snapshot(res.state.student));
    fs::remove_all(dir);
}

TEST_CASE("extract_features shapes") {
    auto cfg = tiny_config();
    auto state = init_state(cfg);
    auto ds = tiny_shapes(5);
    auto f = extract_features(cfg, state.teacher, ds.images, 2);
    CHECK(f.cls.shape() == Shape{5, 16});
    CHECK(f.patches.shape() == Shape{5, 16, 16});
    CHECK(f.rows == 4);
    auto whole = extract_features(cfg, state.teacher, ds.images, 32);
    CHECK(whole.cls.to_vector() == f.cls.to_vector());
}
