#include <catch_amalgamated.hpp>

#include <random>

#include "elf/conv.hpp"
#include "elf/gradcheck.hpp"

using namespace elf;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return detail::random_tensor(std::move(s), rng);
}

}  // namespace

TEST_CASE("identity 1x1 kernel reproduces the input bit-exact") {
    std::mt19937_64 rng(1);
    Tensor<float> x(Shape{2, 1, 5, 7});
    for (auto& v : x.mutable_data()) v = static_cast<float>(uniform(rng, -3, 3));
    Tensor<float> w(Shape{1, 1, 1, 1}, 1.0f), b(Shape{1}, 0.0f);
    CHECK(conv2d(x, w, b).data() == x.data());
    CHECK(conv2d(x, w, Tensor<float>()).data() == x.data());
}

TEST_CASE("all-ones 3x3 on a constant image gives 9c inside") {
    const float c = 0.25f;
    Tensor<float> x(Shape{1, 1, 6, 6}, c), w(Shape{1, 1, 3, 3}, 1.0f);
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    auto y = conv2d(x, w, Tensor<float>(), o);
    REQUIRE(y.shape() == Shape{1, 1, 6, 6});
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 1; j < 5; ++j) CHECK(y[i * 6 + j] == 9 * c);
    CHECK(y[0] == 4 * c);  // corner sees 2x2 of the image
}

TEST_CASE("output extents and errors") {
    Tensor<float> x(Shape{1, 4, 8, 8});
    Conv2dOptions o;
    o.stride = 2;
    CHECK(conv2d(x, Tensor<float>(Shape{3, 4, 2, 2}), Tensor<float>(), o).shape() == Shape{1, 3, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor<float>(Shape{3, 4, 3, 3}), Tensor<float>(), o), Error);  // (8-3)/2 not integral
    Conv2dOptions g;
    g.groups = 3;
    CHECK_THROWS_AS(conv2d(x, Tensor<float>(Shape{3, 1, 1, 1}), Tensor<float>(), g), Error);
    CHECK_THROWS_AS(conv2d(x, Tensor<float>(Shape{3, 3, 1, 1}), Tensor<float>()), Error);
}

TEST_CASE("depth-wise conv filters channels independently") {
    Tensor<float> x(Shape{1, 2, 3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2});
    Tensor<float> w(Shape{2, 1, 1, 1}, {3, 5});
    Conv2dOptions o;
    o.groups = 2;
    auto y = conv2d(x, w, Tensor<float>(), o);
    CHECK(y[0] == 3);
    CHECK(y[9] == 10);
}

TEST_CASE("conv2d gradients (input, weight, bias) match finite differences") {
    auto x = rnd({1, 4, 6, 6}, 1), w = rnd({8, 4, 3, 3}, 2), b = rnd({8}, 3);
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(4), {}});
    auto r = check_gradients("conv2d", [=] { return (*proj)(conv2d(x, w, b, o)); }, {{"x", x}, {"w", w}, {"b", b}},
                             kLayerTolerance, {1e-4, 1000});
    CHECK(r.pass());
    CHECK(r.max_rel_err() < 1e-4);

    // strided, grouped, asymmetric padding
    auto x2 = rnd({2, 4, 7, 6}, 5), w2 = rnd({6, 2, 3, 2}, 6), b2 = rnd({6}, 7);
    Conv2dOptions o2{2, 1, 0, 2};
    auto r2 = check_gradients("conv2d", [=] { return (*proj)(conv2d(x2, w2, b2, o2)); },
                              {{"x", x2}, {"w", w2}, {"b", b2}}, kLayerTolerance, {1e-4, 1000});
    CHECK(r2.pass());
}
