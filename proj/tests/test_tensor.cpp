#include <doctest.h>
#include <mfr/tensor.hpp>

#include "gradcheck.hpp"

using namespace mfr;

TEST_CASE("tensor factories and accessors") {
  auto t = Tensor<float>::from({1, 2, 3, 4, 5, 6}, {2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == doctest::Approx(6.0f));
  CHECK_THROWS_AS(t.at({2, 0}), IndexError);
  CHECK_THROWS_AS(t.at({0}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>::from({1, 2}, {3}), DimensionError);

  auto z = Tensor<float>::zeros({4});
  CHECK(z.data().abs().maxCoeff() == 0.0f);
  auto o = Tensor<float>::ones({2, 2});
  CHECK(o.data().sum() == doctest::Approx(4.0f));
  CHECK(Tensor<float>::scalar(7.0f).item() == doctest::Approx(7.0f));
  CHECK(t.all_finite());
}

TEST_CASE("clone detaches storage") {
  auto a = Tensor<float>::from({1, 2}, {2});
  auto b = a.clone();
  b.data()[0] = 99;
  CHECK(a.data()[0] == doctest::Approx(1.0f));
  CHECK(b.shape() == a.shape());
}

TEST_CASE("cast converts elementwise") {
  auto a = Tensor<float>::from({1.5f, -2.25f}, {2});
  auto d = a.cast<double>();
  CHECK(d.data()[0] == doctest::Approx(1.5));
  CHECK(d.data()[1] == doctest::Approx(-2.25));
}

TEST_CASE("sum backward yields ones") {
  auto x = Tensor<double>::from({1, 2, 3, 4}, {2, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto s = sum(x, &tape);
  CHECK(s.item() == doctest::Approx(10.0));
  backward(s, tape);
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("mul backward routes partner values") {
  auto x = Tensor<double>::from({2, 3}, {2});
  auto y = Tensor<double>::from({5, 7}, {2});
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tape<double> tape;
  auto s = sum(mul(x, y, &tape), &tape);
  backward(s, tape);
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(7.0));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(3.0));
}

TEST_CASE("squaring doubles the accumulated gradient") {
  auto x = Tensor<double>::from({3, -4}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto s = sum(mul(x, x, &tape), &tape);
  backward(s, tape);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  auto x = Tensor<double>::from({1, 2}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto s = sum(x, &tape);
  backward(s, tape);
  backward(s, tape);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  x.zero_grad();
  backward(s, tape);
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("backward requires scalar loss from this tape") {
  auto x = Tensor<double>::from({1, 2}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = add(x, x, &tape);
  CHECK_THROWS_AS(backward(y, tape), DimensionError);

  Tape<double> other;
  auto s = sum(x, &tape);
  CHECK_THROWS_AS(backward(s, other), GraphError);
  auto leaf = Tensor<double>::scalar(1.0);
  CHECK_THROWS_AS(backward(leaf, tape), GraphError);  // never produced on the tape
}

TEST_CASE("untracked ops stay off the tape") {
  auto x = Tensor<double>::from({1, 2}, {2});  // no requires_grad
  Tape<double> tape;
  auto s = sum(x, &tape);
  CHECK(tape.size() == 0);
  CHECK_THROWS_AS(backward(s, tape), GraphError);
}

TEST_CASE("add and mul reject shape mismatch") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, b), DimensionError);
}

TEST_CASE("scale values and gradient") {
  auto x = Tensor<double>::from({1, -2}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = scale(x, 3.0, &tape);
  CHECK(y.data()[1] == doctest::Approx(-6.0));
  auto s = sum(y, &tape);
  backward(s, tape);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("reshape and flatten preserve order and route grads") {
  auto x = Tensor<double>::from({1, 2, 3, 4, 5, 6}, {1, 2, 3});
  x.set_requires_grad(true);
  auto r = reshape(x, {3, 2});
  CHECK(r.at({2, 1}) == doctest::Approx(6.0));
  auto f = flatten(x);
  CHECK(f.shape() == Shape{1, 6});
  CHECK_THROWS_AS(reshape(x, Shape{4, 2}), DimensionError);

  Tape<double> tape;
  auto s = sum(mul(reshape(x, {6}, &tape), reshape(x, {6}, &tape), &tape), &tape);
  backward(s, tape);
  CHECK(x.grad()[3] == doctest::Approx(8.0));
}

TEST_CASE("concat joins 512-d embeddings into 1024") {
  Rng rng(7);
  auto a = Tensor<double>::randn({2, 512}, rng);
  auto b = Tensor<double>::randn({2, 512}, rng);
  auto c = concat(a, b, 1);
  CHECK(c.shape() == Shape{2, 1024});
  CHECK(c.at({1, 0}) == doctest::Approx(a.at({1, 0})));
  CHECK(c.at({0, 512}) == doctest::Approx(b.at({0, 0})));
  CHECK(c.at({1, 1023}) == doctest::Approx(b.at({1, 511})));
}

TEST_CASE("concat axis 0 and validation") {
  auto a = Tensor<double>::from({1, 2}, {1, 2});
  auto b = Tensor<double>::from({3, 4, 5, 6}, {2, 2});
  auto c = concat(a, b, 0);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.at({2, 1}) == doctest::Approx(6.0));
  CHECK_THROWS_AS(concat(a, b, 1), DimensionError);
  CHECK_THROWS_AS(concat(std::vector<Tensor<double>>{}, 0), ParameterError);
  CHECK_THROWS_AS(concat(a, b, 2), DimensionError);
}

TEST_CASE("concat backward splits the incoming gradient") {
  auto a = Tensor<double>::from({1, 2}, {1, 2});
  auto b = Tensor<double>::from({3, 4}, {1, 2});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  auto c = concat(a, b, 1, &tape);
  auto s = sum(mul(c, c, &tape), &tape);
  backward(s, tape);
  CHECK(a.grad()[1] == doctest::Approx(4.0));
  CHECK(b.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("l2_normalize unit vectors") {
  auto x = Tensor<double>::from({3, 4}, {1, 2});
  auto n = l2_normalize(x, 1);
  CHECK(n.at({0, 0}) == doctest::Approx(0.6));
  CHECK(n.at({0, 1}) == doctest::Approx(0.8));
  CHECK_THROWS_AS(l2_normalize(x, 2), DimensionError);

  // row norms after normalization are 1
  Rng rng(3);
  auto y = l2_normalize(Tensor<double>::randn({4, 8}, rng), 1);
  for (int i = 0; i < 4; ++i) {
    double ss = 0;
    for (int j = 0; j < 8; ++j) ss += y.at({i, j}) * y.at({i, j});
    CHECK(ss == doctest::Approx(1.0));
  }
}

TEST_CASE("gradcheck elementwise composition") {
  Rng rng(11);
  auto x = Tensor<double>::randn({2, 3}, rng);
  auto y = Tensor<double>::randn({2, 3}, rng);
  gc::check_gradients({x, y},
                      [&](Tape<double>* t) {
                        auto a = add(mul(x, y, t), scale(x, 0.5, t), t);
                        return sum(mul(a, a, t), t);
                      },
                      rng);
}

TEST_CASE("gradcheck concat and reshape") {
  Rng rng(12);
  auto x = Tensor<double>::randn({2, 3}, rng);
  auto y = Tensor<double>::randn({2, 2}, rng);
  gc::check_gradients({x, y},
                      [&](Tape<double>* t) {
                        auto c = concat(x, y, 1, t);
                        auto r = reshape(c, {10}, t);
                        return sum(mul(r, r, t), t);
                      },
                      rng);
}

TEST_CASE("gradcheck l2_normalize both axes") {
  Rng rng(13);
  auto x = Tensor<double>::randn({3, 4}, rng);
  auto w = Tensor<double>::randn({3, 4}, rng);
  for (int axis : {0, 1}) {
    gc::check_gradients({x},
                        [&, axis](Tape<double>* t) {
                          return sum(mul(l2_normalize(x, axis, 1e-12, t), w, t), t);
                        },
                        rng);
  }
}
