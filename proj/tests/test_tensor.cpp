#include <cmath>
#include <random>

#include "doctest.h"
#include "mobilex/tensor.hpp"
#include "oracles.hpp"

using namespace mobilex;

TEST_CASE("shape helpers") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);
    CHECK(shape_str({1, 3, 8, 8}) == "[1,3,8,8]");
}

TEST_CASE("tensor construction and aliasing") {
    Tensor<float> t({2, 2}, 1.5f);
    CHECK(t.numel() == 4);
    CHECK(t.data()[3] == doctest::Approx(1.5f));

    Tensor<float> alias = t;  // shares storage
    alias.data()[0] = 7.0f;
    CHECK(t.data()[0] == doctest::Approx(7.0f));

    Tensor<float> deep = t.clone();
    deep.data()[0] = -1.0f;
    CHECK(t.data()[0] == doctest::Approx(7.0f));

    Tensor<float> s = Tensor<float>::scalar(3.0f);
    CHECK(s.item() == doctest::Approx(3.0f));
    CHECK_THROWS_AS((void)t.item(), ShapeError);
}

TEST_CASE("elementwise op values") {
    Tensor<double> a({3}, {1.0, -2.0, 3.0});
    Tensor<double> b({3}, {0.5, 4.0, -1.0});
    CHECK(add(a, b).data()[1] == doctest::Approx(2.0));
    CHECK(sub(a, b).data()[2] == doctest::Approx(4.0));
    CHECK(mul(a, b).data()[0] == doctest::Approx(0.5));
    CHECK(add_scalar(a, 1.0).data()[1] == doctest::Approx(-1.0));
    CHECK(mul_scalar(a, -2.0).data()[2] == doctest::Approx(-6.0));
    CHECK(relu(a).data()[1] == doctest::Approx(0.0));
    CHECK(relu(a).data()[2] == doctest::Approx(3.0));
    CHECK(sum(a).item() == doctest::Approx(2.0));
    Tensor<double> c({4}, 0.0);
    CHECK_THROWS_AS((void)add(a, c), ShapeError);
}

TEST_CASE("backward accumulates into leaves and is replayed in reverse") {
    Tensor<double> x({2}, {2.0, -3.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    // f = sum(relu(x) * x + 2x) -> df/dx = 2x+2 for x>0, 2 for x<=0
    auto y = add(mul(relu(x), x), mul_scalar(x, 2.0));
    auto loss = sum(y);
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));

    // Second backward doubles every leaf grad exactly.
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(12.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("no-grad guard suppresses recording") {
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        NoGradGuard<double> guard;
        auto y = mul(x, x);
        CHECK(tape.size() == 0);
        CHECK(y.data()[1] == doctest::Approx(4.0));
    }
    auto z = sum(mul(x, x));
    CHECK(tape.size() > 0);
    tape.backward(z);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("elementwise gradcheck against central differences") {
    std::mt19937_64 rng(42);
    auto a = oracle::rand_tensor<double>({4, 5}, rng, -2.0, 2.0, true);
    auto b = oracle::rand_tensor<double>({4, 5}, rng, -2.0, 2.0, true);
    auto forward = [&]() {
        auto t = add(mul(a, b), mul_scalar(sub(a, b), 0.7));
        return sum(mul(relu(t), t));
    };
    CHECK(oracle::gradcheck(forward, {a, b}) < 1e-4);
}

TEST_CASE("backward requires a scalar root") {
    Tensor<double> x({3}, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}
