#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "blora/errors.hpp"
#include "blora/ops.hpp"
#include "blora/rng.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

using namespace blora;

namespace {

using oracle::random_tensor;

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
  Tensor x = Tensor::vector({1, 2, 3}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad().size() == x.numel());
}

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor v = Tensor::matrix({{3}, {4}});
  const Tensor r = matmul(id, v);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0, 0) == 3.0);
  CHECK(r.at(1, 0) == 4.0);
  CHECK(matmul(Tensor::matrix({{1, 2}}), v).item() == 11.0);
}

TEST_CASE("matmul gradient matches central differences") {
  Tensor a = Tensor::matrix({{1, 2}}, true);
  const Tensor b = Tensor::matrix({{3}, {4}});
  backward(sum(matmul(a, b)));
  // Independent check of the analytic values.
  const auto f = [&](double a0, double a1) { return a0 * 3 + a1 * 4; };
  const double h = 1e-6;
  CHECK(a.grad()[0] == doctest::Approx((f(1 + h, 2) - f(1 - h, 2)) / (2 * h)).epsilon(1e-9));
  CHECK(a.grad()[1] == doctest::Approx((f(1, 2 + h) - f(1, 2 - h)) / (2 * h)).epsilon(1e-9));
  CHECK(grad_of(a) == std::vector<double>{3.0, 4.0});
}

TEST_CASE("matmul dimension error names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("sigmoid examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(std::abs(sigmoid(Tensor::scalar(50.0)).item() - 1.0) <= 1e-15);
  Tensor x = Tensor::scalar(0.0, true);
  backward(sigmoid(x));
  CHECK(x.grad()[0] == 0.25);
  const Tensor extreme = sigmoid(Tensor::vector({-1000.0, 1000.0}));
  CHECK(extreme.at(0) == 0.0);
  CHECK(extreme.at(1) == 1.0);
}

TEST_CASE("round_ste rounds half to even with identity gradient") {
  const Tensor r = round_ste(Tensor::vector({1.4, 2.5, -1.5, 0.5, 3.5}));
  CHECK(r.at(0) == 1.0);
  CHECK(r.at(1) == 2.0);
  CHECK(r.at(2) == -2.0);
  CHECK(r.at(3) == 0.0);
  CHECK(r.at(4) == 4.0);
  Rng rng(3);
  Tensor x = random_tensor({50}, rng, -100, 100);
  x.set_requires_grad(true);
  backward(sum(round_ste(x)));
  for (double g : x.grad()) CHECK(g == 1.0);
  Tensor y = Tensor::scalar(1.4, true);
  backward(round_ste(y));
  CHECK(y.grad()[0] == 1.0);
}

TEST_CASE("clip values, gradient and range errors") {
  CHECK(clip(Tensor::scalar(1.5), 0, 1).item() == 1.0);
  CHECK(clip(Tensor::scalar(0.3), 0, 1).item() == 0.3);
  Tensor x = Tensor::vector({2.0, -1.0, 0.5, 0.0, 1.0}, true);
  backward(sum(clip(x, 0, 1)));
  CHECK(grad_of(x) == std::vector<double>{0.0, 0.0, 1.0, 1.0, 1.0});
  CHECK_THROWS_AS(clip(Tensor::scalar(0.0), 1, 1), RangeError);
  CHECK_THROWS_AS(clip(Tensor::scalar(0.0), 2, 1), RangeError);
}

TEST_CASE("backward examples and errors") {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  backward(sum(x));
  CHECK(grad_of(x) == std::vector<double>{1, 1, 1});

  Tensor y = Tensor::vector({1, 2}, true);
  backward(sum(mul(y, y)));
  CHECK(grad_of(y) == std::vector<double>{2, 4});

  Tensor z = Tensor::vector({1, 2}, true);
  CHECK_THROWS_AS(backward(mul(z, z)), ShapeError);
  Tape::current().clear();

  Tensor w = Tensor::vector({1, 2}, true);
  const Tensor loss = sum(mul(w, w));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), TapeError);

  Tape::current().clear();
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0, true)), TapeError);
}

TEST_CASE("sum(sigmoid(W x)) gradient against finite differences") {
  Rng rng(11);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor x = random_tensor({4, 1}, rng);
  const auto r = oracle::gradcheck(
      [](const std::vector<Tensor>& in) { return sum(sigmoid(matmul(in[0], in[1]))); }, {w, x});
  CHECK(r.checked == 16);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("every differentiable op agrees with central differences") {
  Rng rng(2024);
  const auto cases = oracle::differentiable_op_cases();
  CHECK(cases.size() == 30);
  for (const oracle::OpCase& c : cases) {
    const double worst = oracle::worst_op_error(c, rng);
    INFO("op " << c.name << " max relative error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("using a tensor twice doubles its gradient") {
  Tensor a = Tensor::vector({0.3, -1.2, 2.0}, true);
  backward(sum(sigmoid(a)));
  const auto once = grad_of(a);
  Tensor b = Tensor::vector({0.3, -1.2, 2.0}, true);
  backward(add(sum(sigmoid(b)), sum(sigmoid(b))));
  for (std::size_t i = 0; i < 3; ++i) CHECK(b.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("reverse pass runs in exact reverse execution order") {
  std::vector<int> order;
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tape& tape = Tape::current();
  tape.clear();
  tape.record([&] { order.push_back(1); });
  const Tensor y = scale(x, 2.0);
  tape.record([&] { order.push_back(2); });
  const Tensor z = sum(y);
  tape.record([&] { order.push_back(3); });
  backward(z);
  CHECK(order == std::vector<int>{3, 2, 1});
  CHECK(grad_of(x) == std::vector<double>{2.0, 2.0});
}

TEST_CASE("no-grad guard records nothing") {
  Tape::current().clear();
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  {
    NoGradGuard guard;
    const Tensor y = sum(mul(x, x));
    CHECK(y.item() == 5.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::current().size() == 0);
}

TEST_CASE("forward ops stay finite on finite extreme inputs") {
  const Tensor big = Tensor::matrix({{1000.0, -1000.0, 0.0}, {-700.0, 700.0, 1e-300}});
  for (const Tensor& t : {sigmoid(big), softmax(big), log_softmax(big), tanh(big), layer_norm(big),
                          clip(big, -1.0, 1.0), round_ste(big)}) {
    for (double v : t.data()) CHECK(std::isfinite(v));
  }
  const std::vector<int> labels{1, 0};
  CHECK(std::isfinite(cross_entropy_with_logits(big, labels).item()));
  const Tensor constant = layer_norm(Tensor::full({1, 4}, 3.0));
  for (double v : constant.data()) CHECK(v == 0.0);
}

TEST_CASE("softmax rows sum to one and cross-entropy matches a direct formula") {
  const Tensor logits = Tensor::matrix({{1.0, 2.0, 3.0}, {0.5, -0.5, 0.0}});
  const Tensor p = softmax(logits);
  CHECK(p.at(0, 0) + p.at(0, 1) + p.at(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<int> labels{2, 0};
  const double l0 = -3.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double l1 = -0.5 + std::log(std::exp(0.5) + std::exp(-0.5) + std::exp(0.0));
  CHECK(cross_entropy_with_logits(logits, labels).item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
  const std::vector<int> bad{3, 0};
  CHECK_THROWS(cross_entropy_with_logits(logits, bad));
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
  const auto run = [] {
    Rng rng(99);
    Tensor w = random_tensor({4, 4}, rng);
    w.set_requires_grad(true);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor loss = sum(softmax(matmul(w, x)));
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
