#include <catch_amalgamated.hpp>

#include <random>

#include "elf/gradcheck.hpp"
#include "elf/ops.hpp"
#include "elf/resize.hpp"

using namespace elf;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
    std::mt19937_64 rng(seed);
    return detail::random_tensor(std::move(s), rng, lo, hi);
}

// Random projection of the output; the analytic/numeric comparison is the
// library's central-difference harness.
GradcheckReport fd(const std::string& name, std::function<Tensor<double>(const Tensor<double>&)> f,
                   const Tensor<double>& x, std::uint64_t seed = 3) {
    auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(seed), {}});
    return check_gradients(name, [f, x, proj] { return (*proj)(f(x)); }, {{"x", x}}, kLayerTolerance);
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
    Tensor<float> a(Shape{2}, {1, 2}), b(Shape{2}, {3, 4});
    auto c = add(a, b);
    CHECK(c[0] == 4);
    CHECK(c[1] == 6);
    CHECK(sub(b, a)[1] == 2);
    CHECK(div(b, a)[1] == 2);
    CHECK(scale(a, 3.0f)[1] == 6);
}

TEST_CASE("multiplying by one is bitwise identity") {
    auto x = rnd({3, 5}, 1);
    auto y = mul(x, Tensor<double>(Shape{1}, 1.0));
    CHECK(y.data() == x.data());
}

TEST_CASE("Charbonnier kernel at zero difference equals epsilon") {
    Tensor<float> x(Shape{1}, 0.0f);
    const float eps = 1e-3f;
    CHECK_THAT(sqrt(add_scalar(square(x), eps * eps))[0], WithinAbs(1e-3, 1e-9));
}

TEST_CASE("elementwise errors") {
    CHECK_THROWS_AS(add(Tensor<float>(Shape{2, 3}), Tensor<float>(Shape{3, 2})), Error);
    CHECK_THROWS_AS(sqrt(Tensor<float>(Shape{1}, -1.0f)), Error);
    CHECK_THROWS_AS(div(Tensor<float>(Shape{1}, 1.0f), Tensor<float>(Shape{1}, 0.0f)), Error);
    CHECK_THROWS_AS(clamp(Tensor<float>(Shape{1}), 1.0f, 0.0f), Error);
}

TEST_CASE("broadcasting along leading axes") {
    Tensor<float> a(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), b(Shape{3}, {10, 20, 30});
    auto c = add(a, b);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c[4] == 25);
}

TEST_CASE("matmul values") {
    Tensor<float> id(Shape{2, 2}, {1, 0, 0, 1}), x(Shape{2, 2}, {0.3f, -2, 7, 1.5f});
    CHECK(matmul(id, x).data() == x.data());
    Tensor<float> m(Shape{2, 2}, {1, 2, 3, 4}), ones(Shape{2, 1}, {1, 1});
    auto r = matmul(m, ones);
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r[0] == 3);
    CHECK(r[1] == 7);
    CHECK_THROWS_AS(matmul(Tensor<float>(Shape{2, 3}), Tensor<float>(Shape{2, 3})), Error);
}

TEST_CASE("matmul gradient matches finite differences") {
    auto a = rnd({3, 4}, 2);
    auto b = rnd({4, 2}, 3);
    auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(4), {}});
    auto r = check_gradients("matmul", [a, b, proj] { return (*proj)(matmul(a, b)); }, {{"a", a}, {"b", b}},
                             kLayerTolerance);
    CHECK(r.pass());
    CHECK(r.max_rel_err() < 1e-4);
}

TEST_CASE("softmax") {
    auto s = softmax(Tensor<float>(Shape{2}, {0, 0}), 0);
    CHECK(s[0] == 0.5f);
    CHECK(s[1] == 0.5f);
    auto big = softmax(Tensor<float>(Shape{2}, {1000, 1000}), 0);
    CHECK(big[0] == 0.5f);
    CHECK(big[1] == 0.5f);
    auto x = rnd({3, 7}, 5, -20, 20);
    auto p = softmax(x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 7; ++c) {
            CHECK(p[r * 7 + c] >= 0);
            sum += p[r * 7 + c];
        }
        CHECK_THAT(sum, WithinAbs(1.0, 1e-6));
    }
    CHECK_THROWS_AS(softmax(x, 2), Error);
    CHECK(fd("softmax", [](const Tensor<double>& t) { return softmax(t, 0); }, rnd({4}, 6)).pass());
}

TEST_CASE("primitive gradients match finite differences") {
    using F = std::function<Tensor<double>(const Tensor<double>&)>;
    const std::vector<std::pair<std::string, F>> cases = {
        {"add_broadcast", [](const Tensor<double>& t) { return add(t, Tensor<double>(Shape{3}, {0.1, 0.2, 0.3})); }},
        {"mul", [](const Tensor<double>& t) { return mul(t, t); }},
        {"div", [](const Tensor<double>& t) { return div(Tensor<double>(t.shape(), 1.0), add_scalar(square(t), 0.5)); }},
        {"sqrt", [](const Tensor<double>& t) { return sqrt(add_scalar(square(t), 1e-2)); }},
        {"exp", [](const Tensor<double>& t) { return exp(t); }},
        {"sigmoid", [](const Tensor<double>& t) { return sigmoid(t); }},
        {"gelu", [](const Tensor<double>& t) { return gelu(t); }},
        {"relu", [](const Tensor<double>& t) { return relu(t); }},
        {"clamp", [](const Tensor<double>& t) { return clamp(t, -0.5, 0.5); }},
        {"sum_axis", [](const Tensor<double>& t) { return sum_axis(t, 1); }},
        {"mean_axis", [](const Tensor<double>& t) { return mean_axis(t, 0); }},
        {"permute", [](const Tensor<double>& t) { return permute(reshape(t, Shape{2, 3, 2}), {2, 0, 1}); }},
        {"transpose", [](const Tensor<double>& t) { return transpose_last2(t); }},
        {"concat", [](const Tensor<double>& t) { return concat(std::vector<Tensor<double>>{t, square(t)}, 1); }},
        {"slice", [](const Tensor<double>& t) { return slice(t, 1, 1, 2); }},
        {"pad", [](const Tensor<double>& t) { return pad2d(reshape(t, Shape{1, 1, 4, 3}), 1, 0, 2, 1); }},
        {"l2_normalize", [](const Tensor<double>& t) { return l2_normalize(t, 1); }},
        {"gap", [](const Tensor<double>& t) { return global_avg_pool(reshape(t, Shape{1, 2, 2, 3})); }},
    };
    for (const auto& [name, f] : cases) {
        INFO(name);
        auto r = fd(name, f, rnd({4, 3}, 7));
        CHECK(r.pass());
    }
}

TEST_CASE("shape primitives") {
    Tensor<float> x(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK(transpose_last2(x)[1] == 3);
    CHECK(reshape(x, Shape{3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(reshape(x, Shape{4}), Error);
    auto c = concat(std::vector<Tensor<float>>{x, x}, 0);
    CHECK(c.shape() == Shape{4, 3});
    CHECK(slice(x, 1, 1, 2)[0] == 1);
    auto p = pad2d(Tensor<float>(Shape{1, 1, 1, 1}, 5.0f), 1, 1, 1, 1);
    CHECK(p.shape() == Shape{1, 1, 3, 3});
    CHECK(p[4] == 5.0f);
    CHECK(p[0] == 0.0f);
}

TEST_CASE("snap makes the additive decomposition exact") {
    std::mt19937_64 rng(9);
    Tensor<float> a(Shape{1000}), b(Shape{1000});
    for (std::size_t i = 0; i < 1000; ++i) {
        a.mutable_data()[i] = static_cast<float>(uniform(rng, 0, 1));
        b.mutable_data()[i] = static_cast<float>(uniform(rng, -3, 3));
    }
    auto sa = snap(a), sb = snap(b);
    auto diff = sub(sa, sb);
    auto back = add(sb, diff);
    CHECK(back.data() == sa.data());
    CHECK_THROWS_AS(snap(Tensor<float>(Shape{1}, 20.0f)), Error);
}

TEST_CASE("bilinear resize on constant and affine images") {
    Tensor<float> c(Shape{1, 2, 8, 12}, 0.37f);
    for (auto [num, den] : {std::pair{1, 2}, std::pair{2, 1}, std::pair{3, 4}}) {
        auto r = bilinear_scale(c, num, den);
        for (float v : r.data()) CHECK_THAT(v, WithinAbs(0.37, 1e-6));
    }
    Tensor<float> ramp(Shape{1, 1, 16, 16});
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) ramp.mutable_data()[y * 16 + x] = (x + 16.0f * y) / 255.0f;
    auto rt = bilinear_scale(bilinear_scale(ramp, 1, 2), 2, 1);
    for (std::size_t i = 0; i < ramp.size(); ++i) CHECK_THAT(rt[i], WithinAbs(ramp[i], 1e-6));
    // arbitrary affine map under a non-integer target size
    Tensor<double> aff(Shape{1, 1, 6, 9});
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 9; ++x) aff.mutable_data()[y * 9 + x] = 0.25 + 0.1 * x - 0.3 * y;
    auto r = bilinear_resize(aff, 4, 5);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            const double sx = (x + 0.5) * 9.0 / 5 - 0.5, sy = (y + 0.5) * 6.0 / 4 - 0.5;
            CHECK_THAT(r[y * 5 + x], WithinAbs(0.25 + 0.1 * sx - 0.3 * sy, 1e-12));
        }
    CHECK_THROWS_AS(bilinear_resize(c, 0, 4), Error);
    CHECK_THROWS_AS(bilinear_scale(Tensor<float>(Shape{1, 1, 5, 5}), 1, 2), Error);
}

TEST_CASE("bilinear gradient matches finite differences") {
    CHECK(fd("bilinear", [](const Tensor<double>& t) { return bilinear_scale(t, 2, 1); }, rnd({1, 2, 3, 4}, 8)).pass());
    CHECK(fd("bilinear", [](const Tensor<double>& t) { return bilinear_resize(t, 3, 5); }, rnd({1, 2, 6, 4}, 9)).pass());
}
