#include <doctest.h>

#include <cmath>
#include <vector>

#include "blora/errors.hpp"
#include "blora/ops.hpp"
#include "blora/quantizer.hpp"
#include "oracles.hpp"

using namespace blora;

namespace {

QuantizerState state_with(double alpha, double beta, std::array<double, 4> phi = {6, 6, 6, 6}) {
  QuantizerState s = QuantizerState::make(RangeMode::PerCallMinMax);
  s.alpha = alpha;
  s.beta = beta;
  s.phi = Tensor({4}, {phi[0], phi[1], phi[2], phi[3]}, true);
  return s;
}

GateDraw hard(const std::array<int, 4>& g) {
  return fixed_gates({double(g[0]), double(g[1]), double(g[2]), double(g[3])});
}

std::array<int, 4> random_nested_gates(Rng& rng) {
  const auto k = rng.below(5);  // number of active refinement levels
  std::array<int, 4> g{};
  for (std::size_t i = 0; i < 4; ++i) g[i] = i < k ? 1 : 0;
  return g;
}

const QuantizerConfig kDefault{};

}  // namespace

TEST_CASE("config defaults and validation") {
  CHECK(kDefault.zeta1 == -0.1);
  CHECK(kDefault.zeta2 == 1.1);
  CHECK(kDefault.threshold == 0.34);
  CHECK(kDefault.temperature == doctest::Approx(2.0 / 3.0));
  CHECK_NOTHROW(kDefault.validate());
  QuantizerConfig c;
  c.zeta1 = 0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.zeta2 = 0.9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.threshold = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("step size examples and closed-form identity") {
  CHECK(step_size(0, 1, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(step_size(0, 1, 4) == doctest::Approx(1.0 / 15.0).epsilon(1e-15));
  CHECK(step_size(-1, 1, 8) == doctest::Approx(2.0 / 255.0).epsilon(1e-15));
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-10, 10);
    const double b = a + rng.uniform(1e-6, 20);
    for (int bits : kAllBits) {
      CHECK(step_size(a, b, bits) == doctest::Approx(oracle::closed_step(a, b, bits)).epsilon(1e-13));
      CHECK(step_size_closed_form(a, b, bits) == doctest::Approx(oracle::closed_step(a, b, bits)).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(step_size(0, 1, 3), DomainError);
  CHECK_THROWS_AS(step_size(0, 1, 64), DomainError);
  CHECK_THROWS_AS(step_size(1, 1, 4), RangeError);
}

TEST_CASE("sampled gates saturate and match the stretched formula") {
  Rng rng(1);
  const QuantizerState open = state_with(0, 1, {50, 50, 50, 50});
  const QuantizerState shut = state_with(0, 1, {-50, -50, -50, -50});
  for (int i = 0; i < 100; ++i) {
    const GateDraw a = sample_gates(open, kDefault, rng);
    const GateDraw b = sample_gates(shut, kDefault, rng);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(a.z[k].item() == 1.0);
      CHECK(b.z[k].item() == 0.0);
      CHECK(a.u[k] > 0.0);
      CHECK(a.u[k] < 1.0);
    }
  }
  CHECK(relaxed_gate(Tensor::vector({0.0}), 0.5, kDefault, 0).item() == doctest::Approx(0.5).epsilon(1e-15));

  QuantizerConfig verbatim;
  verbatim.verbatim_alg2 = true;
  // s -> 1 gives 1 * (zeta1 - zeta2) + zeta2 = zeta1 < 0, clamped to 0.
  CHECK(relaxed_gate(Tensor::vector({50.0}), 0.5, verbatim, 0).item() == 0.0);
  CHECK(relaxed_gate(Tensor::vector({-50.0}), 0.5, verbatim, 0).item() == 1.0);

  QuantizerConfig per_bits;
  per_bits.temperature_per_bitwidth = true;
  for (std::size_t level = 0; level < 4; ++level) {
    const double u = 0.3;
    const double phi = 0.7;
    const double b = kRefinementBits[level];
    const double s = oracle::sigmoid((std::log(u / (1 - u)) + phi) / b);
    const double expected = std::clamp(s * 1.2 - 0.1, 0.0, 1.0);
    CHECK(relaxed_gate(Tensor::vector({phi}), u, per_bits, level).item() ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK_THROWS_AS(sample_gates(open, kDefault, rng, Mode::Eval), ModeError);
  CHECK_THROWS_AS(relaxed_gate(Tensor::vector({0.0}), 0.0, kDefault, 0), DomainError);
}

TEST_CASE("relaxed gates pass gradients to phi") {
  const auto fn = [](const std::vector<Tensor>& in) {
    return relaxed_gate(in[0], 0.4, kDefault, 1);
  };
  const auto r = oracle::gradcheck(fn, {Tensor::vector({0.3})});
  CHECK(r.max_rel_error < 1e-6);
  Tensor phi = Tensor::vector({0.3}, true);
  backward(relaxed_gate(phi, 0.4, kDefault, 1));
  CHECK(phi.grad()[0] > 0.0);
}

TEST_CASE("eval gates saturate and nest") {
  const GateDraw on = eval_gates(state_with(0, 1, {50, 50, 50, 50}), kDefault);
  const GateDraw off = eval_gates(state_with(0, 1, {-50, -50, -50, -50}), kDefault);
  CHECK(on.nested_values() == std::array<double, 4>{1, 1, 1, 1});
  CHECK(off.nested_values() == std::array<double, 4>{0, 0, 0, 0});
  const GateDraw mixed = eval_gates(state_with(0, 1, {50, -50, 50, 50}), kDefault);
  CHECK(mixed.nested_values() == std::array<double, 4>{1, 0, 0, 0});
  CHECK(mixed.hard);
}

TEST_CASE("eval decision thresholds for adopted and verbatim indicators") {
  // Adopted: sigma(phi - T log(-z1/z2)) > t. Verbatim: sigma(T log(-z2/z1) - phi) < t.
  const double shift = kDefault.temperature * std::log(0.1 / 1.1);
  const double logit_t = std::log(0.34 / 0.66);
  const double adopted_cut = logit_t + shift;
  const double verbatim_cut = -logit_t - shift;
  QuantizerConfig verbatim;
  verbatim.verbatim_alg2 = true;
  for (double phi = -6.0; phi <= 6.0; phi += 0.01) {
    const auto s = state_with(0, 1, {phi, 50, 50, 50});
    if (std::abs(phi - adopted_cut) > 1e-9) {
      CHECK((eval_gates(s, kDefault).nested_values()[0] == 1.0) == (phi > adopted_cut));
    }
    if (std::abs(phi - verbatim_cut) > 1e-9) {
      CHECK((eval_gates(s, verbatim).nested_values()[0] == 1.0) == (phi > verbatim_cut));
    }
  }
  CHECK(adopted_cut == doctest::Approx(-2.2618).epsilon(1e-3));
  CHECK(verbatim_cut == doctest::Approx(2.2618).epsilon(1e-3));
}

TEST_CASE("quantize examples") {
  const Tensor x = Tensor::scalar(0.4);
  const QuantizerState s = state_with(0, 1);
  CHECK(quantize(x, s, kDefault, hard({0, 0, 0, 0})).item() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const double full = quantize(x, s, kDefault, hard({1, 1, 1, 1})).item();
  CHECK(std::abs(full - 0.4) <= 1.0 / (2.0 * (std::ldexp(1.0, 32) - 1.0)));
  const double base = quantize(x, s, kDefault, hard({0, 0, 0, 0})).item();
  CHECK(quantize(x, s, kDefault, hard({0, 1, 1, 1})).item() == base);
  CHECK_THROWS_AS(quantize(Tensor(), s, kDefault, hard({1, 1, 1, 1})), ShapeError);
  QuantizerState unresolved = state_with(1, 1);
  CHECK_THROWS_AS(quantize(x, unresolved, kDefault, hard({1, 1, 1, 1})), RangeError);
}

TEST_CASE("quantize matches the scalar oracle on random instances") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-5, 5);
    const double b = a + rng.uniform(1e-3, 10);
    const auto g = random_nested_gates(rng);
    std::vector<double> xs(8);
    for (double& v : xs) v = rng.uniform(a - 2, b + 2);
    const Tensor q = quantize(Tensor({8}, xs), state_with(a, b), kDefault, hard(g));
    for (std::size_t j = 0; j < xs.size(); ++j) {
      CHECK(std::abs(q.at(j) - oracle::quantize_scalar(xs[j], a, b, g)) <= 1e-12 * (1 + std::abs(b - a)));
    }
  }
}

TEST_CASE("quantizer property suite") {
  Rng rng(4242);
  int instances = 0;
  for (int i = 0; i < 1000; ++i, ++instances) {
    const double a = rng.uniform(-5, 5);
    const double b = a + rng.uniform(1e-3, 10);
    const auto g = random_nested_gates(rng);
    const double x = rng.uniform(a - 1, b + 1);
    const double c = std::clamp(x, a, b);
    const QuantizerState s = state_with(a, b);
    const int finest = oracle::finest_bits(g);
    const double step = oracle::closed_step(a, b, finest);
    const double xq = quantize(Tensor::scalar(x), s, kDefault, hard(g)).item();
    const double x2 = quantize(Tensor::scalar(x), s, kDefault, hard({0, 0, 0, 0})).item();

    // Grid membership.
    const double k = (xq - x2) / step;
    CHECK(std::abs(xq - x2 - std::nearbyint(k) * step) <= 1e-9);
    // Reconstruction bound.
    CHECK(std::abs(c - xq) <= step / 2 + 1e-12);
    // Range safety.
    CHECK(xq >= a - step / 2);
    CHECK(xq <= b + step / 2);
    // Monotone refinement.
    std::array<int, 4> more = g;
    for (int& v : more) {
      if (v == 0) {
        v = 1;
        break;
      }
    }
    const double finer = quantize(Tensor::scalar(x), s, kDefault, hard(more)).item();
    CHECK(std::abs(c - finer) <= std::abs(c - xq) + 1e-15);
    // Nesting: finer logits and gate values are irrelevant once a coarser gate is 0.
    if (g[3] == 0) {
      std::array<double, 4> noisy{};
      std::size_t first_zero = 0;
      while (g[first_zero]) ++first_zero;
      for (std::size_t j = 0; j < 4; ++j) noisy[j] = j < first_zero ? 1.0 : (j == first_zero ? 0.0 : double(rng.below(2)));
      const double other = quantize(Tensor::scalar(x), state_with(a, b, {rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9)}),
                                    kDefault, fixed_gates(noisy)).item();
      CHECK(other == xq);
    }
  }
  CHECK(instances >= 1000);
}

TEST_CASE("straight-through gradient wrt x is one inside the range") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    Tensor x = Tensor::scalar(rng.uniform(0.01, 0.99), true);
    backward(sum(quantize(x, state_with(0, 1), kDefault, hard({1, 1, 1, 1}))));
    CHECK(x.grad()[0] == 1.0);
  }
  Tensor outside = Tensor::scalar(1.5, true);
  backward(sum(quantize(outside, state_with(0, 1), kDefault, hard({1, 1, 1, 1}))));
  CHECK(outside.grad()[0] == 0.0);
}

TEST_CASE("gate regularizer examples, gradient and monotonicity") {
  CHECK(gate_regularizer(state_with(0, 1, {50, 50, 50, 50}), kDefault).item() == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(gate_regularizer(state_with(0, 1, {-50, -50, -50, -50}), kDefault).item() < 1e-20);
  CHECK(gate_regularizer(state_with(0, 1, {0, 0, 0, 0}), kDefault).item() == 0.9375);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 4> phi;
    for (double& p : phi) p = rng.uniform(-4, 4);
    QuantizerState s = state_with(0, 1, phi);
    backward(gate_regularizer(s, kDefault));
    for (double g : s.phi.grad()) CHECK(g > 0.0);
    double oracle_value = 0.0;
    double running = 1.0;
    for (double p : phi) oracle_value += (running *= oracle::sigmoid(p));
    CHECK(gate_regularizer(s, kDefault).item() == doctest::Approx(oracle_value).epsilon(1e-14));
  }
  const auto r = oracle::gradcheck(
      [](const std::vector<Tensor>& in) {
        QuantizerState s = QuantizerState::make(RangeMode::PerCallMinMax);
        s.phi = in[0];
        return gate_regularizer(s, kDefault);
      },
      {Tensor::vector({0.5, -1.0, 2.0, 0.1})});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("expected and decided bitwidths") {
  CHECK(expected_bitwidth(state_with(0, 1, {50, 50, 50, 50}), kDefault, Mode::Eval) == 32.0);
  CHECK(expected_bitwidth(state_with(0, 1, {-50, -50, -50, -50}), kDefault, Mode::Eval) == 2.0);
  CHECK(expected_bitwidth(state_with(0, 1, {50, 50, -50, -50}), kDefault, Mode::Eval) == 8.0);
  CHECK(decided_bitwidth(state_with(0, 1, {50, -50, 50, 50}), kDefault) == 4);
  const std::array<double, 4> phi{0.4, -0.3, 1.2, 2.0};
  double expected = 2.0;
  double running = 1.0;
  for (std::size_t i = 0; i < 4; ++i) expected += kRefinementBits[i] / 2.0 * (running *= oracle::sigmoid(phi[i]));
  CHECK(expected_bitwidth(state_with(0, 1, phi), kDefault, Mode::Train) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected_bitwidth(state_with(0, 1, {50, 50, 50, 50}), kDefault, Mode::Train) == doctest::Approx(32.0));
}

TEST_CASE("range resolution per call, by moving average and for constants") {
  QuantizerState per_call = QuantizerState::make(RangeMode::PerCallMinMax);
  auto r = resolve_range(Tensor::vector({-1.0, 3.0, 0.5}), per_call, Mode::Train);
  CHECK(r == std::pair<double, double>{-1.0, 3.0});
  r = resolve_range(Tensor::vector({0.0, 1.0}), per_call, Mode::Eval);
  CHECK(r == std::pair<double, double>{0.0, 1.0});

  QuantizerState ema = QuantizerState::make(RangeMode::EmaMinMax);
  CHECK(ema.ema_momentum == 0.9);
  resolve_range(Tensor::vector({0.0, 1.0}), ema, Mode::Train);
  r = resolve_range(Tensor::vector({-1.0, 2.0}), ema, Mode::Train);
  CHECK(r.first == doctest::Approx(0.9 * 0.0 + 0.1 * -1.0).epsilon(1e-15));
  CHECK(r.second == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0).epsilon(1e-15));
  const auto frozen = resolve_range(Tensor::vector({-100.0, 100.0}), ema, Mode::Eval);
  CHECK(frozen == r);

  QuantizerState zero = QuantizerState::make(RangeMode::PerCallMinMax);
  const auto widened = resolve_range(Tensor::zeros({3, 2}), zero, Mode::Train);
  CHECK(widened.first == -1e-4);
  CHECK(widened.second == 1e-4);
  CHECK(range_mode_from_string("ema-minmax") == RangeMode::EmaMinMax);
  CHECK(to_string(RangeMode::PerCallMinMax) == "per-call-minmax");
}

TEST_CASE("quantizer module: identity when disabled, pinned draws, eval determinism") {
  Quantizer q(RangeMode::PerCallMinMax, &kDefault);
  Rng rng(0);
  const Tensor x = Tensor::vector({0.1, -0.7, 0.35, 0.9});
  const Tensor a = q(x, Mode::Eval, rng);
  const Tensor b = q(x, Mode::Eval, rng);
  CHECK(std::vector<double>(a.data().begin(), a.data().end()) == std::vector<double>(b.data().begin(), b.data().end()));
  CHECK(q.decided_bits() == 32);
  q.pin_draw(hard({0, 0, 0, 0}));
  const Tensor c = q(x, Mode::Train, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(c.at(i) == doctest::Approx(oracle::quantize_scalar(x.at(i), -0.7, 0.9, {0, 0, 0, 0})).epsilon(1e-14));
  }
  q.unpin_draw();
  q.state().enabled = false;
  const Tensor d = q(x, Mode::Train, rng);
  CHECK(d.node() == x.node());
  CHECK(q.regularizer().item() == 0.0);
}
