#include "blora/adapter.hpp"

#include <cmath>

#include "blora/errors.hpp"
#include "blora/ops.hpp"

namespace blora {

std::string_view to_string(QuantSite site) {
  switch (site) {
    case QuantSite::W0: return "W0";
    case QuantSite::A: return "A";
    case QuantSite::B: return "B";
    case QuantSite::E: return "E";
    case QuantSite::hA: return "hA";
    case QuantSite::hE: return "hE";
    case QuantSite::out: return "out";
  }
  return "?";
}

bool is_weight_site(QuantSite site) {
  return site == QuantSite::W0 || site == QuantSite::A || site == QuantSite::B ||
         site == QuantSite::E;
}

Tensor rank_gates(const Tensor& xi) {
  std::vector<Tensor> gates{Tensor::scalar(1.0)};
  if (!xi.defined()) return stack_scalars(gates);
  const Tensor probs = sigmoid(xi);
  Tensor running;
  for (std::size_t j = 0; j < xi.numel(); ++j) {
    running = j == 0 ? element(probs, 0) : mul(running, element(probs, j));
    gates.push_back(round_ste(running));
  }
  return stack_scalars(gates);
}

Tensor rank_regularizer(const Tensor& xi) {
  if (!xi.defined()) return Tensor::scalar(0.0);
  const Tensor probs = sigmoid(xi);
  Tensor running = element(probs, 0);
  Tensor total = running;
  for (std::size_t j = 1; j < xi.numel(); ++j) {
    running = mul(running, element(probs, j));
    total = add(total, running);
  }
  return total;
}

std::size_t effective_rank(const Tensor& xi) {
  NoGradGuard guard;
  const Tensor gates = rank_gates(xi);
  std::size_t rank = 0;
  for (double g : gates.data()) rank += g != 0.0 ? 1 : 0;
  return rank;
}

Tensor random_weight(std::size_t out, std::size_t in, Rng& rng) {
  std::vector<double> values(out * in);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor({out, in}, std::move(values));
}

BLoraLinear::BLoraLinear(Tensor w0, const BLoraOptions& options, const QuantizerConfig* qconfig,
                         Rng& rng)
    : w0_(std::move(w0)), options_(options) {
  if (w0_.rank() != 2) throw ShapeError("BLoraLinear: W0 must be a matrix");
  if (options_.rank == 0) throw ConfigError("BLoraLinear: rank must be at least 1");
  if (qconfig == nullptr) throw ConfigError("BLoraLinear: missing quantizer config");
  w0_.set_requires_grad(false);
  const std::size_t r = options_.rank;
  std::vector<double> a_init(r * in_features());
  for (double& v : a_init) v = rng.normal(0.0, options_.init_std);
  a_ = Tensor({r, in_features()}, std::move(a_init), true);
  b_ = Tensor::zeros({out_features(), r}, true);
  e_ = Tensor::full({r}, 1.0, true);
  if (r > 1) xi_ = Tensor::full({r - 1}, options_.xi_init, true);
  for (QuantSite site : kQuantSites) {
    const RangeMode mode = is_weight_site(site) ? RangeMode::PerCallMinMax : RangeMode::EmaMinMax;
    Quantizer q(mode, qconfig, options_.phi_init);
    q.state().enabled = options_.quantize;
    quantizers_[static_cast<std::size_t>(site)] = std::move(q);
  }
}

Tensor BLoraLinear::forward(const Tensor& x, Mode mode, Rng& rng) {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw DimensionError("BLoraLinear: input " + shape_string(x.shape()) +
                         " incompatible with W0 " + shape_string(w0_.shape()));
  }
  const Tensor w = quantizer(QuantSite::W0)(w0_, mode, rng);
  const Tensor a = quantizer(QuantSite::A)(a_, mode, rng);
  const Tensor e = quantizer(QuantSite::E)(e_, mode, rng);
  const Tensor b = quantizer(QuantSite::B)(b_, mode, rng);

  const Tensor gated_e = mul(e, rank_gates(xi_));

  const Tensor h_a = quantizer(QuantSite::hA)(matmul(x, transpose(a)), mode, rng);
  const Tensor h_e = quantizer(QuantSite::hE)(mul_rowwise(h_a, gated_e), mode, rng);
  const Tensor update = scale(matmul(h_e, transpose(b)), scaling());
  return quantizer(QuantSite::out)(add(matmul(x, transpose(w)), update), mode, rng);
}

Tensor BLoraLinear::rank_regularizer() const { return blora::rank_regularizer(xi_); }

Tensor BLoraLinear::gate_regularizer() const {
  Tensor total = quantizers_[0].regularizer();
  for (std::size_t i = 1; i < kNumQuantSites; ++i) total = add(total, quantizers_[i].regularizer());
  return total;
}

std::size_t BLoraLinear::effective_rank() const { return blora::effective_rank(xi_); }

std::vector<Tensor> BLoraLinear::parameters() {
  std::vector<Tensor> params{a_, b_, e_};
  for (Tensor& t : gate_parameters()) params.push_back(t);
  return params;
}

std::vector<Tensor> BLoraLinear::gate_parameters() {
  std::vector<Tensor> params;
  if (xi_.defined()) params.push_back(xi_);
  if (options_.quantize) {
    for (Quantizer& q : quantizers_) params.push_back(q.state().phi);
  }
  return params;
}

AttentionLayer::AttentionLayer(std::size_t d_model, std::size_t heads,
                               const BLoraOptions& options, const QuantizerConfig* qconfig,
                               Rng& rng)
    : AttentionLayer(random_weight(d_model, d_model, rng), random_weight(d_model, d_model, rng),
                     random_weight(d_model, d_model, rng), random_weight(d_model, d_model, rng),
                     heads, options, qconfig, rng) {}

AttentionLayer::AttentionLayer(Tensor wq, Tensor wk, Tensor wv, Tensor wo, std::size_t heads,
                               const BLoraOptions& options, const QuantizerConfig* qconfig,
                               Rng& rng)
    : wq_(std::move(wq), options, qconfig, rng),
      wk_(std::move(wk), options, qconfig, rng),
      wv_(std::move(wv), options, qconfig, rng),
      wo_(std::move(wo)),
      heads_(heads) {
  const std::size_t d = wo_.dim(0);
  if (heads_ == 0 || d % heads_ != 0) {
    throw ConfigError("AttentionLayer: " + std::to_string(heads_) +
                      " heads do not divide hidden size " + std::to_string(d));
  }
  wo_.set_requires_grad(false);
}

Tensor AttentionLayer::forward(const Tensor& x, Mode mode, Rng& rng) {
  const std::size_t d = d_model();
  if (x.rank() != 3 || x.dim(2) != d) {
    throw DimensionError("AttentionLayer: input " + shape_string(x.shape()) +
                         " does not end in hidden size " + std::to_string(d));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t seq = x.dim(1);
  const std::size_t head_dim = d / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Tensor flat = reshape(x, {batch * seq, d});
  const Tensor q = wq_.forward(flat, mode, rng);
  const Tensor k = wk_.forward(flat, mode, rng);
  const Tensor v = wv_.forward(flat, mode, rng);

  std::vector<Tensor> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Tensor> heads;
    heads.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const Tensor qh = slice2d(q, b * seq, seq, h * head_dim, head_dim);
      const Tensor kh = slice2d(k, b * seq, seq, h * head_dim, head_dim);
      const Tensor vh = slice2d(v, b * seq, seq, h * head_dim, head_dim);
      const Tensor probs = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
      heads.push_back(matmul(probs, vh));
    }
    rows.push_back(concat_cols(heads));
  }
  const Tensor context = concat_rows(rows);
  return reshape(matmul(context, transpose(wo_)), {batch, seq, d});
}

}  // namespace blora
