#include <cmath>
#include <sstream>

#include "franca/ops.hpp"
#include "franca/rasa.hpp"
#include "helpers.hpp"

using namespace franca;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Coordinates of an r x c grid repeated over `images`, with planted logit
// features in columns 0 and 1 and Gaussian noise elsewhere.
Tensor planted(std::size_t rows, std::size_t cols, std::size_t images, std::size_t d, Rng& rng, double noise) {
    auto coords = patch_coordinates(rows, cols, images);
    std::vector<double> v(coords.rows() * d);
    for (std::size_t i = 0; i < coords.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = rng.normal() * noise;
        v[i * d + 0] = logit(coords[i * 2 + 0]);
        v[i * d + 1] = logit(coords[i * 2 + 1]);
    }
    return Tensor({coords.rows(), d}, std::move(v));
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Plane random_plane(std::size_t d, Rng& rng) {
    std::vector<double> a(d), b(d);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    return gram_schmidt_pair(a, b);
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, std::size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t j = 0; j < d; ++j) c[i * d + j] += a[i * d + k] * b[k * d + j];
    return c;
}

}  // namespace

TEST_CASE("patch coordinates are grid centers") {
    auto c = patch_coordinates(2, 4, 2);
    CHECK(c.shape() == Shape{16, 2});
    CHECK(c[0] == 0.25);
    CHECK(c[1] == 0.125);
    CHECK(c[2 * 5 + 0] == 0.75);
    CHECK(c[2 * 5 + 1] == 0.375);
    CHECK(c[2 * 8] == 0.25);
}

TEST_CASE("planted position signal is fit almost exactly") {
    Rng rng(1);
    auto f = planted(8, 8, 2, 6, rng, 0.3);
    auto head = fit_position_head(f, patch_coordinates(8, 8, 2), {600, 0.05});
    CHECK(head.loss < 1e-3);
    CHECK(head.weight.shape() == Shape{2, 6});
}

TEST_CASE("position-free features stay at the best-constant loss") {
    Rng rng(2);
    auto coords = patch_coordinates(8, 8, 4);
    auto noise = random_tensor({coords.rows(), 6}, rng);
    const double base = best_constant_loss(coords);
    CHECK(base == doctest::Approx(2.0 * 63.0 / 768.0).epsilon(1e-12));
    auto head = fit_position_head(noise, coords);
    CHECK(head.loss >= 0.05);
    CHECK(head.loss > 0.9 * base);
    auto zero = fit_position_head(noise, coords, {0, 0.05});
    CHECK(zero.loss == doctest::Approx(base).epsilon(1e-12));
    for (double w : zero.weight.data()) CHECK(w == 0.0);
    CHECK_THROWS(fit_position_head(Tensor::full({coords.rows(), 6}, 0.5), coords));
}

TEST_CASE("gram_schmidt_pair") {
    const double r[] = {1, 0}, c[] = {1, 1};
    auto p = gram_schmidt_pair(r, c);
    CHECK(p.u_r == std::vector<double>{1, 0});
    CHECK(p.u_c[0] == doctest::Approx(0.0));
    CHECK(p.u_c[1] == doctest::Approx(1.0));
    const double e1[] = {0, 1, 0}, e2[] = {0, 0, 1};
    auto q = gram_schmidt_pair(e1, e2);
    CHECK(q.u_r == std::vector<double>(std::begin(e1), std::end(e1)));
    CHECK(q.u_c == std::vector<double>(std::begin(e2), std::end(e2)));
    const double w[] = {1, 2, 3}, w2[] = {2, 4, 6}, z[] = {0, 0, 0};
    CHECK_THROWS_AS(gram_schmidt_pair(w, w2), std::domain_error);
    CHECK_THROWS_AS(gram_schmidt_pair(z, w), std::domain_error);

    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto pl = random_plane(7, rng);
        CHECK(pl.residual() < 1e-12);
    }
}

TEST_CASE("remove_plane") {
    PrecisionScope prec(Precision::f64);
    Rng rng(4);
    auto pl = random_plane(5, rng);
    auto z = random_tensor({10, 5}, rng);
    auto once = remove_plane(z, pl);
    for (std::size_t i = 0; i < 10; ++i) {
        auto row = once.data().subspan(i * 5, 5);
        CHECK(std::abs(dot(row, pl.u_r)) < 1e-6);
        CHECK(std::abs(dot(row, pl.u_c)) < 1e-6);
        CHECK(dot(row, row) <= dot(z.data().subspan(i * 5, 5), z.data().subspan(i * 5, 5)) + 1e-12);
    }
    CHECK(max_abs_diff(remove_plane(once, pl).data(), once.data()) < 1e-6);

    std::vector<double> in(5);
    for (std::size_t j = 0; j < 5; ++j) in[j] = 2.0 * pl.u_r[j] - 3.0 * pl.u_c[j];
    auto removed = remove_plane(Tensor({1, 5}, in), pl);
    for (double v : removed.data()) CHECK(std::abs(v) < 1e-12);

    Plane bad = pl;
    bad.u_r[0] += 0.1;
    CHECK_THROWS(remove_plane(z, bad));
}

TEST_CASE("plane projector is an orthogonal projector of rank D - 2") {
    Rng rng(5);
    for (std::size_t d : {3, 6, 9}) {
        auto pl = random_plane(d, rng);
        auto l = plane_projector(pl);
        auto l2 = matmul_sq(l, l, d);
        CHECK(max_abs_diff(l, l2) < 1e-6);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) CHECK(l[i * d + j] == doctest::Approx(l[j * d + i]));
        double trace = 0.0;
        for (std::size_t i = 0; i < d; ++i) trace += l[i * d + i];
        CHECK(trace == doctest::Approx(static_cast<double>(d) - 2.0));
        std::vector<double> lu(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) lu[i] += l[i * d + j] * pl.u_r[j];
        for (double v : lu) CHECK(std::abs(v) < 1e-12);
    }
}

TEST_CASE("one planted plane: removed once, then patience stops") {
    Rng rng(6);
    auto f = planted(8, 8, 4, 6, rng, 0.3);
    auto coords = patch_coordinates(8, 8, 4);
    auto st = rasa_iterate(f, coords, 9, 0.05, {600, 0.05});
    REQUIRE(st.history.size() >= 2);
    CHECK(st.iterations() == 1);
    CHECK(st.history[0].loss < 1e-3);
    CHECK(st.history[1].loss > 0.9 * st.baseline_loss);
    CHECK(st.stop_reason == "patience");
    std::ostringstream os;
    st.write_report(os);
    CHECK(os.str().rfind("iteration,L_pos,plane_norm_residual\n", 0) == 0);
}

TEST_CASE("position-free features stop after one iteration") {
    Rng rng(7);
    auto coords = patch_coordinates(8, 8, 4);
    auto st = rasa_iterate(random_tensor({coords.rows(), 6}, rng), coords, 9, 0.05);
    CHECK(st.history.size() == 1);
    CHECK(st.iterations() == 0);
    CHECK(st.stop_reason == "patience");
    CHECK_THROWS(rasa_iterate(random_tensor({coords.rows(), 6}, rng), coords, 0));
}

TEST_CASE("transform is the ordered product of projectors and planes are orthonormal") {
    Rng rng(8);
    auto coords = patch_coordinates(8, 8, 4);
    // Position spread over several directions, so several planes come out.
    std::vector<double> v(coords.rows() * 8);
    for (std::size_t i = 0; i < coords.rows(); ++i) {
        const double r = logit(coords[i * 2]), c = logit(coords[i * 2 + 1]);
        for (std::size_t j = 0; j < 8; ++j)
            v[i * 8 + j] = rng.normal() * 0.2 + r * std::cos(0.7 * static_cast<double>(j)) + c * std::sin(1.3 * static_cast<double>(j));
    }
    auto st = rasa_iterate(Tensor({coords.rows(), 8}, v), coords, 3);
    REQUIRE(st.iterations() >= 1);
    std::vector<double> prod(64, 0.0);
    for (std::size_t i = 0; i < 8; ++i) prod[i * 8 + i] = 1.0;
    for (const auto& pl : st.planes) {
        CHECK(pl.residual() < 1e-6);
        prod = matmul_sq(prod, plane_projector(pl), 8);
    }
    CHECK(max_abs_diff(prod, st.transform) < 1e-9);
    for (std::size_t a = 0; a < st.planes.size(); ++a)
        for (std::size_t b = 0; b < a; ++b) {
            CHECK(std::abs(dot(st.planes[a].u_r, st.planes[b].u_r)) < 1e-6);
            CHECK(std::abs(dot(st.planes[a].u_c, st.planes[b].u_r)) < 1e-6);
        }
    CHECK(st.transform_tensor().shape() == Shape{8, 8});
}

TEST_CASE("fold_into_linear matches iterative removal") {
    PrecisionScope prec(Precision::f64);
    Rng rng(9);
    const std::size_t din = 5, d = 6;
    auto st = empty_rasa_state(d);
    auto w = random_tensor({din, d}, rng), b = random_tensor({d}, rng);
    auto [w0, b0] = fold_into_linear(w, b, st);
    CHECK(w0.to_vector() == w.to_vector());
    CHECK(b0.to_vector() == b.to_vector());

    // Two planes extracted from noise heads, added by hand.
    for (int t = 0; t < 2; ++t) {
        std::vector<double> a(d), c(d);
        for (auto& x : a) x = rng.normal();
        for (auto& x : c) x = rng.normal();
        auto lt = Tensor({d, d}, st.transform);
        auto ar = matmul(Tensor({1, d}, a), lt), cr = matmul(Tensor({1, d}, c), lt);
        Plane pl = gram_schmidt_pair(ar.data(), cr.data());
        st.planes.push_back(pl);
        st.transform = matmul(lt, Tensor({d, d}, plane_projector(pl))).to_vector();
    }
    auto [wf, bf] = fold_into_linear(w, b, st);
    auto x = random_tensor({100, din}, rng);
    auto folded = affine(x, wf, bf);
    Tensor iterative = affine(x, w, b);
    for (const auto& pl : st.planes) iterative = remove_plane(iterative, pl);
    CHECK(max_abs_diff(folded.data(), iterative.data()) < 1e-5);
    CHECK_THROWS(fold_into_linear(random_tensor({din, d + 1}, rng), random_tensor({d + 1}, rng), st));
}
