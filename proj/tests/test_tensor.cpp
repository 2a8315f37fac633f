#include <doctest.h>

#include <cmath>

#include "advseg/random.hpp"
#include "advseg/tensor.hpp"
#include "oracles.hpp"

using namespace advseg;

TEST_CASE("sigmoid, log_sum_exp and matmul closed forms") {
  CHECK(sigmoid(Tensor::row({0.0})).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(log_sum_exp(Tensor::row({0, 0, 0, 0})).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  Tensor a(Matrix::Ones(2, 3));
  Tensor b(Matrix::Ones(3, 1));
  Tensor c = matmul(a, b);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 1);
  CHECK(c.value()(0, 0) == 3.0);
  CHECK(c.value()(1, 0) == 3.0);
}

TEST_CASE("shape mismatches are rejected") {
  Tensor a(Matrix::Ones(2, 3));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor(Matrix::Ones(3, 3))), ShapeError);
  CHECK_THROWS_AS(concat({a, Tensor(Matrix::Ones(2, 2))}, 0), ShapeError);
}

TEST_CASE("log_sum_exp is stable for large inputs") {
  const double v = log_sum_exp(Tensor::row({1000.0, 1000.0})).item();
  CHECK(v == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("backward of sum and sigmoid") {
  Tensor x(Matrix::Zero(1, 3), true);
  {
    Tape tape;
    Tensor loss = sum(x);
    tape.backward(loss);
  }
  CHECK(x.grad() == Matrix::Ones(1, 3));

  Tensor z = Tensor::scalar(0.0, true);
  compute_gradients([&] { return sigmoid(z); });
  CHECK(z.grad()(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar loss and a second call") {
  Tensor x(Matrix::Ones(2, 2), true);
  Tape tape;
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  Tensor loss = sum(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("operations outside a tape are not recorded") {
  Tensor x(Matrix::Ones(1, 2), true);
  Tensor y = sum(x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  {
    NoGradScope off;
    CHECK_FALSE(sum(x).requires_grad());
  }
  CHECK(sum(x).requires_grad());
}

TEST_CASE("shared inputs accumulate gradient from every use") {
  Tensor x = Tensor::scalar(3.0, true);
  compute_gradients([&] { return mul(x, x); });
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("finite differences") {
  Tensor x = Tensor::scalar(3.0);
  const Matrix g = finite_difference_gradient([&] { return x.item() * x.item(); }, x);
  CHECK(std::abs(g(0, 0) - 6.0) < 1e-8);

  Tensor y(Matrix::Ones(2, 2));
  CHECK(finite_difference_gradient([] { return 4.0; }, y).isZero(0.0));
}

TEST_CASE("random two-layer composition matches finite differences") {
  Rng rng(11);
  Tensor x(uniform_matrix(3, 4, 1.0, rng));
  Tensor w1(uniform_matrix(4, 5, 1.0, rng), true);
  Tensor b1(uniform_matrix(1, 5, 1.0, rng), true);
  Tensor w2(uniform_matrix(5, 2, 1.0, rng), true);
  auto loss = [&] {
    Tensor h = tanh(add(matmul(x, w1), b1));
    return sum(log_softmax(matmul(h, w2)));
  };
  CHECK(testing::gradient_error(loss, w1) < 1e-4);
  CHECK(testing::gradient_error(loss, b1) < 1e-4);
  CHECK(testing::gradient_error(loss, w2) < 1e-4);
}

TEST_CASE("every primitive matches finite differences") {
  Rng rng(5);
  Tensor a(uniform_matrix(3, 4, 1.0, rng), true);
  Tensor b(uniform_matrix(3, 4, 1.0, rng), true);
  Tensor w(uniform_matrix(1, 4, 1.0, rng), true);
  Tensor table(uniform_matrix(5, 4, 1.0, rng), true);
  Tensor right(uniform_matrix(4, 2, 1.0, rng), true);
  const std::vector<int> ids{4, 0, 4, 2};
  auto weighted = [&](const Tensor& t) {
    // A fixed random read-out keeps each output coordinate visible.
    Rng probe_rng(99);
    Tensor probe(uniform_matrix(t.rows(), t.cols(), 1.0, probe_rng));
    return sum(mul(t, probe));
  };
  const std::vector<std::function<Tensor()>> cases{
      [&] { return weighted(add(a, b)); },
      [&] { return weighted(add(a, w)); },
      [&] { return weighted(sub(a, b)); },
      [&] { return weighted(mul(a, b)); },
      [&] { return weighted(scale(a, -1.7)); },
      [&] { return weighted(concat({a, b}, 0)); },
      [&] { return weighted(concat({a, b}, 1)); },
      [&] { return weighted(sigmoid(a)); },
      [&] { return weighted(tanh(a)); },
      [&] { return weighted(softmax(a)); },
      [&] { return weighted(log_softmax(a)); },
      [&] { return weighted(log_sum_exp(a)); },
      [&] { return weighted(mean_over_axis(a, 0)); },
      [&] { return weighted(mean_over_axis(a, 1)); },
      [&] { return weighted(slice(a, 1, 2, 1, 3)); },
      [&] { return weighted(slice_row(a, 2)); },
      [&] { return weighted(gather_rows(table, ids)); },
      [&] { return weighted(matmul(a, right)); },
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(i);
    CHECK(testing::gradient_error(cases[i], a) < 1e-6);
    CHECK(testing::gradient_error(cases[i], b) < 1e-6);
    CHECK(testing::gradient_error(cases[i], w) < 1e-6);
    CHECK(testing::gradient_error(cases[i], table) < 1e-6);
    CHECK(testing::gradient_error(cases[i], right) < 1e-6);
  }
}

TEST_CASE("detach and constant cut the graph") {
  Tensor a = Tensor::scalar(2.0, true);
  Tape tape;
  CHECK_FALSE(detach(a).requires_grad());
  CHECK(detach(a).item() == 2.0);
  CHECK_FALSE(constant(Matrix::Ones(1, 1)).requires_grad());
}

TEST_CASE("gather_rows rejects out-of-range ids") {
  Tensor table(Matrix::Ones(3, 2));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(gather_rows(table, bad), std::out_of_range);
}

TEST_CASE("clone is independent of the original") {
  Tensor a(Matrix::Ones(2, 2), true);
  Tensor b = a.clone();
  b.mutable_value()(0, 0) = 5.0;
  CHECK(a.value()(0, 0) == 1.0);
  CHECK_FALSE(a.same_storage(b));
  Tensor c = a;
  CHECK(a.same_storage(c));
}
