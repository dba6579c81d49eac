#include <cmath>

#include "franca/heads.hpp"
#include "franca/ops.hpp"
#include "helpers.hpp"

using namespace franca;
using testutil::random_tensor;

namespace {

HeadBankConfig small_bank() {
    HeadBankConfig cfg = HeadBankConfig::matryoshka(16, 3, 8);
    return cfg;
}

}  // namespace

TEST_CASE("matryoshka widths and prototype counts") {
    auto cfg = HeadBankConfig::matryoshka(256, 5, 256);
    CHECK(cfg.dims == std::vector<std::size_t>{16, 32, 64, 128, 256});
    std::vector<std::size_t> protos;
    for (std::size_t i = 0; i < 5; ++i) protos.push_back(cfg.prototypes_at(i));
    CHECK(protos == std::vector<std::size_t>{16, 32, 64, 128, 256});
    auto desk = HeadBankConfig::matryoshka(64, 5, 256);
    CHECK(desk.dims == std::vector<std::size_t>{4, 8, 16, 32, 64});
    CHECK(desk.prototypes_at(0) == 16);
    CHECK_THROWS(HeadBankConfig::matryoshka(64, 5, 16));
    CHECK_THROWS(HeadBankConfig::matryoshka(12, 4, 64));
}

TEST_CASE("slice_embedding") {
    const std::size_t dims[] = {4, 8};
    auto z = Tensor::of({1, 8}, {0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(slice_embedding(z, 8, dims).to_vector() == z.to_vector());
    CHECK(slice_embedding(z, 4, dims).to_vector() == std::vector<double>{0, 1, 2, 3});
    CHECK_THROWS(slice_embedding(z, 5, dims));

    Tensor x = Tensor::of({1, 8}, {0, 1, 2, 3, 4, 5, 6, 7}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope s(tape);
        tape.backward(sum(multiply(slice_embedding(x, 4, dims), slice_embedding(x, 4, dims))));
    }
    for (std::size_t j = 0; j < 4; ++j) CHECK(x.grad()[j] == 2.0 * static_cast<double>(j));
    for (std::size_t j = 4; j < 8; ++j) CHECK(x.grad()[j] == 0.0);
}

TEST_CASE("nesting locality: tail coordinates never move a lower level") {
    PrecisionScope p(Precision::f64);
    auto cfg = small_bank();
    ParamStore params;
    Rng rng(1);
    init_heads(cfg, params, rng);
    auto cls = random_tensor({3, 16}, rng);
    auto patches = random_tensor({3, 4, 16}, rng);
    auto base = bank_forward(cfg, params, cls, patches, 0.1);
    for (std::size_t lv = 0; lv < cfg.levels(); ++lv) {
        auto c2 = cls.to_vector();
        auto p2 = patches.to_vector();
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t j = cfg.dims[lv]; j < 16; ++j) c2[r * 16 + j] += rng.normal() * 10.0;
        for (std::size_t r = 0; r < 12; ++r)
            for (std::size_t j = cfg.dims[lv]; j < 16; ++j) p2[r * 16 + j] += rng.normal() * 10.0;
        auto out = bank_forward(cfg, params, Tensor({3, 16}, c2), Tensor({3, 4, 16}, p2), 0.1);
        for (std::size_t i = 0; i <= lv; ++i) {
            CHECK(out[i].cls.to_vector() == base[i].cls.to_vector());
            CHECK(out[i].patch.to_vector() == base[i].patch.to_vector());
        }
        if (lv + 1 < cfg.levels()) CHECK(out.back().cls.to_vector() != base.back().cls.to_vector());
    }
}

TEST_CASE("logits are bounded by the inverse temperature") {
    auto cfg = small_bank();
    ParamStore params;
    Rng rng(2);
    init_heads(cfg, params, rng);
    const double tau = 0.07;
    auto out = bank_forward(cfg, params, random_tensor({5, 16}, rng, false, 3.0), Tensor(), tau);
    for (const auto& lv : out) {
        CHECK_FALSE(lv.patch.defined());
        for (double v : lv.cls.data()) CHECK(std::abs(v) <= 1.0 / tau + 1e-4);
    }
    CHECK(out[0].cls.shape() == Shape{5, 2});
    CHECK(out[2].cls.shape() == Shape{5, 8});
    CHECK_THROWS(bank_forward(cfg, params, random_tensor({5, 16}, rng), Tensor(), 0.0));
}

TEST_CASE("bank_forward is permutation-equivariant over the batch") {
    auto cfg = small_bank();
    ParamStore params;
    Rng rng(3);
    init_heads(cfg, params, rng);
    auto x = random_tensor({4, 16}, rng);
    auto v = x.to_vector();
    std::vector<double> swapped(v.begin() + 16, v.begin() + 32);
    swapped.insert(swapped.end(), v.begin(), v.begin() + 16);
    swapped.insert(swapped.end(), v.begin() + 32, v.end());
    auto a = bank_forward(cfg, params, x, Tensor(), 0.1);
    auto b = bank_forward(cfg, params, Tensor({4, 16}, swapped), Tensor(), 0.1);
    for (std::size_t lv = 0; lv < cfg.levels(); ++lv) {
        const std::size_t c = cfg.prototypes_at(lv);
        for (std::size_t j = 0; j < c; ++j) {
            CHECK(a[lv].cls[j] == b[lv].cls[c + j]);
            CHECK(a[lv].cls[c + j] == b[lv].cls[j]);
            CHECK(a[lv].cls[3 * c + j] == b[lv].cls[3 * c + j]);
        }
    }
    auto again = bank_forward(cfg, params, x, Tensor(), 0.1);
    CHECK(again[1].cls.to_vector() == a[1].cls.to_vector());
}

TEST_CASE("levels own independent parameters") {
    auto cfg = small_bank();
    ParamStore params;
    Rng rng(4);
    init_heads(cfg, params, rng);
    CHECK(params.contains("head.cls.0.fc0.w"));
    CHECK(params.contains("head.patch.2.proto"));
    CHECK(params.at("head.cls.0.fc0.w").shape() == Shape{4, 16});
    CHECK(params.at("head.cls.2.fc2.w").shape() == Shape{64, 8});
    CHECK(params.at("head.cls.1.proto").shape() == Shape{4, 4});
    cfg.patch_nesting = false;
    ParamStore flat;
    init_heads(cfg, flat, rng);
    CHECK_FALSE(flat.contains("head.patch.0.proto"));
    CHECK(flat.contains("head.patch.2.proto"));
}

TEST_CASE("prototype renormalization") {
    auto cfg = small_bank();
    ParamStore params;
    Rng rng(5);
    init_heads(cfg, params, rng);
    for (auto& [name, t] : params)
        if (name.ends_with(".proto"))
            for (auto& v : t.mutable_data()) v *= 3.0 + rng.uniform();
    renormalize_prototypes(cfg, params);
    for (const auto& [name, t] : params) {
        if (!name.ends_with(".proto")) continue;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            double ss = 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) ss += t[r * t.cols() + j] * t[r * t.cols() + j];
            CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("total_loss identities") {
    PrecisionScope p(Precision::f64);
    Rng rng(6);
    auto s0 = random_tensor({3, 4}, rng);
    auto s1 = random_tensor({3, 4}, rng);
    auto t0 = softmax_t(s0, 1.0), t1 = softmax_t(s1, 1.0);

    // Student logits equal to teacher logits: CE reduces to entropy when only the diagonal pair exists.
    LevelStudent one{{s0, s1}, Tensor()};
    LevelTargets tg{{softmax_t(s1, 1.0), softmax_t(s0, 1.0)}, Tensor()};
    auto entropy = [](const Tensor& q) {
        double h = 0.0;
        for (double v : q.data()) h -= v * std::log(v);
        return h / static_cast<double>(q.rows());
    };
    const LevelStudent levels[] = {one};
    const LevelTargets targets[] = {tg};
    auto res = total_loss(levels, targets);
    CHECK(res.total.item() == doctest::Approx((entropy(t0) + entropy(t1)) / 2.0).epsilon(1e-12));

    auto ps = random_tensor({5, 4}, rng);
    auto pt = softmax_t(ps, 1.0);
    LevelStudent withp{{s0, s1}, ps};
    LevelTargets tgp{{t1, t0}, pt};
    const LevelStudent l2[] = {withp};
    const LevelTargets t2[] = {tgp};
    auto r2 = total_loss(l2, t2);
    CHECK(r2.total.item() == doctest::Approx((entropy(t0) + entropy(t1)) / 2.0 + entropy(pt)).epsilon(1e-12));
    CHECK(r2.patch[0] == doctest::Approx(entropy(pt)).epsilon(1e-12));
}

TEST_CASE("total_loss with a zeroed level equals the other level") {
    PrecisionScope p(Precision::f64);
    Rng rng(7);
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    LevelStudent first{{a, b}, Tensor()};
    LevelTargets first_t{{softmax_t(b, 0.5), softmax_t(a, 0.5)}, Tensor()};
    // Level two: sharp student logits with one-hot targets on their argmax.
    auto sharp = Tensor::of({2, 3}, {1e4, 0, 0, 0, 1e4, 0});
    auto onehot = Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0});
    LevelStudent second{{sharp, sharp}, Tensor()};
    LevelTargets second_t{{onehot, onehot}, Tensor()};
    const LevelStudent s1[] = {first};
    const LevelTargets t1[] = {first_t};
    const LevelStudent s2[] = {first, second};
    const LevelTargets t2[] = {first_t, second_t};
    auto only = total_loss(s1, t1);
    auto both = total_loss(s2, t2);
    CHECK(both.total.item() == doctest::Approx(only.total.item()).epsilon(1e-12));
    CHECK(both.level[1] == 0.0);
    const LevelTargets mismatch[] = {first_t};
    CHECK_THROWS(total_loss(s2, mismatch));
}

TEST_CASE("total equals the sum of per-level losses, each non-negative") {
    Rng rng(8);
    std::vector<LevelStudent> s;
    std::vector<LevelTargets> t;
    for (int lv = 0; lv < 3; ++lv) {
        auto a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({4, 5}, rng);
        s.push_back({{a, b, c}, random_tensor({6, 5}, rng)});
        t.push_back({{softmax_t(random_tensor({4, 5}, rng), 0.3), softmax_t(random_tensor({4, 5}, rng), 0.3)},
                     softmax_t(random_tensor({6, 5}, rng), 0.3)});
    }
    auto r = total_loss(s, t);
    double acc = 0.0;
    for (double v : r.level) {
        CHECK(v >= 0.0);
        acc += v;
    }
    CHECK(r.total.item() == doctest::Approx(acc).epsilon(1e-6));
}
