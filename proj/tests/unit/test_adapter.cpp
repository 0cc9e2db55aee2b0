#include <doctest.h>

#include <cmath>
#include <vector>

#include "blora/adapter.hpp"
#include "blora/errors.hpp"
#include "blora/ops.hpp"
#include "oracles.hpp"

using namespace blora;

namespace {

const QuantizerConfig kQ{};

BLoraOptions plain(std::size_t rank) {
  BLoraOptions o;
  o.rank = rank;
  o.quantize = false;
  return o;
}

void fill_normal(Tensor& t, Rng& rng, double stddev = 0.5) {
  for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
}

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal();
  return Tensor({rows, cols}, std::move(v));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// x W0^T + s ((x A^T) * (E g)) B^T with plain loops.
oracle::Matrix dense_block(const oracle::Matrix& x, const BLoraLinear& blk) {
  const auto w0 = oracle::to_matrix(blk.w0());
  const auto a = oracle::to_matrix(blk.a());
  const auto b = oracle::to_matrix(blk.b());
  std::vector<double> g(blk.rank(), 1.0);
  double running = 1.0;
  for (std::size_t i = 1; i < blk.rank(); ++i) {
    running *= oracle::sigmoid(blk.xi().at(i - 1));
    g[i] = std::nearbyint(running);
  }
  auto out = oracle::multiply(x, oracle::transpose(w0));
  auto h = oracle::multiply(x, oracle::transpose(a));
  for (auto& row : h) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] *= blk.e().at(i) * g[i];
  }
  const auto update = oracle::multiply(h, oracle::transpose(b));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += blk.scaling() * update[i][j];
  }
  return out;
}

}  // namespace

TEST_CASE("rank gate examples") {
  CHECK(values(rank_gates(Tensor::vector({0.9, 0.9, -50.0}))) == std::vector<double>{1, 1, 1, 0});
  CHECK(values(rank_gates(Tensor::full({7}, 50.0))) == std::vector<double>(8, 1.0));
  CHECK(values(rank_gates(Tensor::full({7}, -50.0))) == std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0});
  CHECK(values(rank_gates(Tensor())) == std::vector<double>{1});
}

TEST_CASE("rank regularizer examples and gradient") {
  CHECK(rank_regularizer(Tensor::full({7}, -50.0)).item() < 1e-20);
  CHECK(rank_regularizer(Tensor::full({7}, 50.0)).item() == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(rank_regularizer(Tensor::vector({0.0, 0.0})).item() == 0.75);
  const auto r = oracle::gradcheck([](const std::vector<Tensor>& in) { return rank_regularizer(in[0]); },
                                   {Tensor::vector({0.3, -1.2, 2.0, 0.0, 0.7})});
  CHECK(r.max_rel_error < 1e-6);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    Tensor xi = Tensor::zeros({7}, true);
    for (double& v : xi.mutable_data()) v = rng.uniform(-4, 4);
    backward(rank_regularizer(xi));
    for (double g : xi.grad()) CHECK(g > 0.0);
  }
}

TEST_CASE("effective rank examples") {
  CHECK(effective_rank(Tensor::full({7}, 6.0)) == 8);
  CHECK(effective_rank(Tensor::full({7}, -50.0)) == 1);
  CHECK(effective_rank(Tensor::vector({50, 50, 50, -50, 50, 50, 50})) == 4);
  CHECK(effective_rank(Tensor()) == 1);
}

TEST_CASE("rank gates are monotone and agree with the effective rank") {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t r = 1 + rng.below(16);
    Tensor xi;
    if (r > 1) {
      xi = Tensor::zeros({r - 1});
      for (double& v : xi.mutable_data()) v = rng.uniform(-3, 8);
    }
    const auto g = values(rank_gates(xi));
    REQUIRE(g.size() == r);
    CHECK(g[0] == 1.0);
    std::size_t active = 0;
    for (std::size_t k = 0; k < r; ++k) {
      CHECK((g[k] == 0.0 || g[k] == 1.0));
      if (k > 0) CHECK(g[k] <= g[k - 1]);
      active += g[k] == 1.0 ? 1 : 0;
    }
    CHECK(effective_rank(xi) == active);
  }
}

TEST_CASE("rank gate gradient is the straight-through cumulative product") {
  Tensor xi = Tensor::vector({0.4, -0.2, 1.1}, true);
  backward(sum(rank_gates(xi)));
  const auto unrounded = [](std::array<double, 3> v) {
    double running = 1.0;
    double total = 0.0;
    for (double x : v) total += (running *= oracle::sigmoid(x));
    return total;
  };
  const std::array<double, 3> base{0.4, -0.2, 1.1};
  for (std::size_t j = 0; j < 3; ++j) {
    auto plus = base;
    auto minus = base;
    plus[j] += 1e-6;
    minus[j] -= 1e-6;
    const double numeric = (unrounded(plus) - unrounded(minus)) / 2e-6;
    CHECK(oracle::rel_error(xi.grad()[j], numeric) < 1e-7);
  }
}

TEST_CASE("zero-initialized block equals the frozen layer") {
  Rng rng(3);
  BLoraLinear blk(random_matrix(5, 6, rng), plain(4), &kQ, rng);
  CHECK(blk.scaling() == 4.0);
  CHECK(values(blk.b()) == std::vector<double>(20, 0.0));
  CHECK(values(blk.e()) == std::vector<double>(4, 1.0));
  CHECK(values(blk.xi()) == std::vector<double>(3, 6.0));
  const Tensor x = random_matrix(3, 6, rng);
  const auto out = blk.forward(x, Mode::Train, rng);
  const auto expected = oracle::multiply(oracle::to_matrix(x), oracle::transpose(oracle::to_matrix(blk.w0())));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(out.at(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-13));
  }
}

TEST_CASE("block forward matches the dense oracle without quantizers") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    BLoraLinear blk(random_matrix(7, 5, rng), plain(6), &kQ, rng);
    fill_normal(blk.a(), rng);
    fill_normal(blk.b(), rng);
    fill_normal(blk.e(), rng);
    for (double& v : blk.xi().mutable_data()) v = rng.uniform(-1, 4);
    const Tensor x = random_matrix(4, 5, rng);
    const auto out = blk.forward(x, Mode::Eval, rng);
    const auto expected = dense_block(oracle::to_matrix(x), blk);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 7; ++j) CHECK(std::abs(out.at(i, j) - expected[i][j]) < 1e-10);
    }
  }
}

TEST_CASE("rank-1 block and truncation equivalence") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 2 + rng.below(7);
    const std::size_t k = 1 + rng.below(r);
    BLoraLinear full(random_matrix(6, 5, rng), plain(r), &kQ, rng);
    fill_normal(full.a(), rng);
    fill_normal(full.b(), rng);
    fill_normal(full.e(), rng);
    for (std::size_t j = 0; j + 1 < r; ++j) full.xi().mutable_data()[j] = j + 1 < k ? 50.0 : -50.0;
    REQUIRE(full.effective_rank() == k);

    BLoraOptions small_opts = plain(k);
    small_opts.lora_alpha = full.scaling() * static_cast<double>(k);
    BLoraLinear small(full.w0().clone(), small_opts, &kQ, rng);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t c = 0; c < 5; ++c) small.a().mutable_data()[i * 5 + c] = full.a().at(i, c);
      for (std::size_t o = 0; o < 6; ++o) small.b().mutable_data()[o * k + i] = full.b().at(o, i);
      small.e().mutable_data()[i] = full.e().at(i);
    }
    if (k > 1) {
      for (double& v : small.xi().mutable_data()) v = 50.0;
    }
    const Tensor x = random_matrix(3, 5, rng);
    const Tensor y_full = full.forward(x, Mode::Eval, rng);
    const Tensor y_small = small.forward(x, Mode::Eval, rng);
    for (std::size_t i = 0; i < y_full.numel(); ++i) CHECK(std::abs(y_full.at(i) - y_small.at(i)) < 1e-10);
  }
}

TEST_CASE("gradients reach the adapter and gate logits but not W0") {
  Rng rng(6);
  BLoraLinear blk(random_matrix(4, 3, rng), BLoraOptions{.rank = 3, .xi_init = 0.5, .phi_init = 0.0}, &kQ, rng);
  fill_normal(blk.b(), rng);
  const Tensor x = random_matrix(5, 3, rng);
  backward(sum(blk.forward(x, Mode::Train, rng)));
  CHECK_FALSE(blk.w0().has_grad());
  const auto grad_norm = [](const Tensor& t) {
    double norm = 0.0;
    for (double g : t.grad()) {
      CHECK(std::isfinite(g));
      norm += std::abs(g);
    }
    return norm;
  };
  for (Tensor* t : {&blk.a(), &blk.b(), &blk.e(), &blk.xi()}) {
    REQUIRE(t->has_grad());
    CHECK(grad_norm(*t) > 0.0);
  }
  // A relaxed gate clamped to exactly 0 cuts finer levels off a draw, so only
  // some phi vectors are reached on any single pass.
  double phi_norm = 0.0;
  for (QuantSite s : kQuantSites) {
    const Tensor& phi = blk.quantizer(s).state().phi;
    if (phi.has_grad()) phi_norm += grad_norm(phi);
  }
  CHECK(phi_norm > 0.0);
  CHECK(blk.parameters().size() == 3 + 1 + kNumQuantSites);
  CHECK(blk.gate_parameters().size() == 1 + kNumQuantSites);
}

TEST_CASE("composite block gradcheck") {
  Rng rng(7);
  BLoraLinear blk(random_matrix(4, 3, rng), plain(3), &kQ, rng);
  blk.xi().mutable_data()[0] = 2.0;
  blk.xi().mutable_data()[1] = -3.0;
  const Tensor x = random_matrix(2, 3, rng);
  const Tensor target = random_matrix(2, 4, rng);
  const auto loss = [&](const std::vector<Tensor>& in) {
    blk.a() = in[0];
    blk.b() = in[1];
    blk.e() = in[2];
    Rng local(0);
    return mse(blk.forward(x, Mode::Train, local), target);
  };
  Tensor a = blk.a().clone();
  Tensor b = random_matrix(4, 3, rng);
  Tensor e = blk.e().clone();
  fill_normal(a, rng);
  const auto r = oracle::gradcheck(loss, {a, b, e});
  CHECK(r.checked == 9 + 12 + 3);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("block rejects bad inputs") {
  Rng rng(8);
  CHECK_THROWS_AS(BLoraLinear(random_matrix(4, 3, rng), plain(0), &kQ, rng), ConfigError);
  CHECK_THROWS_AS(BLoraLinear(random_matrix(4, 3, rng), plain(2), nullptr, rng), ConfigError);
  BLoraLinear blk(random_matrix(4, 3, rng), plain(2), &kQ, rng);
  CHECK_THROWS_AS(blk.forward(random_matrix(2, 4, rng), Mode::Eval, rng), DimensionError);
}

TEST_CASE("quantized block sites and regularizer at initialization") {
  Rng rng(9);
  BLoraLinear blk(random_matrix(4, 3, rng), BLoraOptions{.rank = 4}, &kQ, rng);
  for (QuantSite s : kQuantSites) {
    CHECK(blk.quantizer(s).state().range_mode ==
          (is_weight_site(s) ? RangeMode::PerCallMinMax : RangeMode::EmaMinMax));
    CHECK(blk.quantizer(s).decided_bits() == 32);
  }
  double per_site = 0.0;
  double running = 1.0;
  for (int i = 0; i < 4; ++i) per_site += (running *= oracle::sigmoid(6.0));
  CHECK(blk.gate_regularizer().item() == doctest::Approx(7 * per_site).epsilon(1e-14));
  CHECK(blk.rank_regularizer().item() ==
        doctest::Approx(oracle::sigmoid(6) + std::pow(oracle::sigmoid(6), 2) + std::pow(oracle::sigmoid(6), 3))
            .epsilon(1e-14));
  CHECK(to_string(QuantSite::hE) == "hE");
}

TEST_CASE("attention layer against the plain attention oracle") {
  Rng rng(10);
  for (std::size_t heads : {1u, 2u, 4u}) {
    const std::size_t d = 8;
    const Tensor wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng);
    const Tensor wv = random_matrix(d, d, rng), wo = random_matrix(d, d, rng);
    AttentionLayer layer(wq, wk, wv, wo, heads, plain(4), &kQ, rng);
    const std::size_t batch = 2, seq = 5;
    std::vector<double> xs(batch * seq * d);
    for (double& v : xs) v = rng.normal();
    const Tensor y = layer.forward(Tensor({batch, seq, d}, xs), Mode::Eval, rng);
    for (std::size_t b = 0; b < batch; ++b) {
      oracle::Matrix x(seq, std::vector<double>(d));
      for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t c = 0; c < d; ++c) x[i][c] = xs[(b * seq + i) * d + c];
      }
      const auto expected = oracle::attention(x, oracle::to_matrix(wq), oracle::to_matrix(wk),
                                              oracle::to_matrix(wv), oracle::to_matrix(wo), heads);
      for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          CHECK(std::abs(y.data()[(b * seq + i) * d + c] - expected[i][c]) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("attention degenerate cases") {
  Rng rng(12);
  const std::size_t d = 4;
  const Tensor wv = random_matrix(d, d, rng), wo = random_matrix(d, d, rng);
  AttentionLayer layer(random_matrix(d, d, rng), random_matrix(d, d, rng), wv, wo, 2, plain(2), &kQ, rng);
  const auto value_out = [&](const std::vector<double>& token) {
    oracle::Matrix t{token};
    return oracle::multiply(oracle::multiply(t, oracle::transpose(oracle::to_matrix(wv))),
                            oracle::transpose(oracle::to_matrix(wo)))[0];
  };
  const std::vector<double> token{0.3, -1.0, 2.0, 0.5};
  const auto expected = value_out(token);

  // One token attends only to itself.
  const Tensor single = layer.forward(Tensor({1, 1, d}, token), Mode::Eval, rng);
  for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(single.at(c) - expected[c]) < 1e-12);

  // Identical tokens attend uniformly, so every position sees the same value.
  std::vector<double> repeated;
  for (int i = 0; i < 3; ++i) repeated.insert(repeated.end(), token.begin(), token.end());
  const Tensor same = layer.forward(Tensor({1, 3, d}, repeated), Mode::Eval, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(same.data()[i * d + c] - expected[c]) < 1e-12);
  }

  CHECK_THROWS_AS(AttentionLayer(6, 4, plain(2), &kQ, rng), ConfigError);
  CHECK_THROWS_AS(layer.forward(Tensor::zeros({1, 2, 3}), Mode::Eval, rng), DimensionError);
}
