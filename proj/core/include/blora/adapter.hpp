#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "blora/quantizer.hpp"
#include "blora/rng.hpp"
#include "blora/tensor.hpp"

namespace blora {

// The seven quantizer sites of a block. The first four quantize parameters,
// the last three quantize intermediate activations.
enum class QuantSite : std::size_t { W0, A, B, E, hA, hE, out };
inline constexpr std::size_t kNumQuantSites = 7;
inline constexpr std::array<QuantSite, kNumQuantSites> kQuantSites{
    QuantSite::W0, QuantSite::A, QuantSite::B, QuantSite::E,
    QuantSite::hA, QuantSite::hE, QuantSite::out};

std::string_view to_string(QuantSite site);
bool is_weight_site(QuantSite site);

inline constexpr double kRankLogitInit = 6.0;

struct BLoraOptions {
  std::size_t rank = 8;
  double lora_alpha = 16.0;
  double init_std = 0.02;
  double xi_init = kRankLogitInit;
  double phi_init = kPhiInit;
  // When false every quantizer is the identity (plain SVD-LoRA block).
  bool quantize = true;
};

// g_1 = 1 and g_i = round(prod_{j=2..i} sigmoid(xi_j)); `xi` holds xi_2..xi_r.
// Rounding is straight-through so gradients reach xi.
Tensor rank_gates(const Tensor& xi);
// sum_{i=2..r} prod_{j=2..i} sigmoid(xi_j); the constant i = 1 term is omitted.
Tensor rank_regularizer(const Tensor& xi);
// Number of active rank gates for the given logits; always in [1, r].
std::size_t effective_rank(const Tensor& xi);

// Frozen W0 plus a gated SVD-style update B diag(g * E) A, with a quantizer
// on every weight and intermediate activation. Inputs are row-major batches
// x[n x in]; outputs are [n x out].
class BLoraLinear {
 public:
  BLoraLinear(Tensor w0, const BLoraOptions& options, const QuantizerConfig* qconfig, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng);

  Tensor rank_regularizer() const;
  // Sum of the seven gate regularizers.
  Tensor gate_regularizer() const;
  std::size_t effective_rank() const;

  std::size_t in_features() const { return w0_.dim(1); }
  std::size_t out_features() const { return w0_.dim(0); }
  std::size_t rank() const { return options_.rank; }
  double scaling() const { return options_.lora_alpha / static_cast<double>(options_.rank); }
  const BLoraOptions& options() const { return options_; }

  const Tensor& w0() const { return w0_; }
  Tensor& a() { return a_; }
  Tensor& b() { return b_; }
  Tensor& e() { return e_; }
  Tensor& xi() { return xi_; }
  const Tensor& a() const { return a_; }
  const Tensor& b() const { return b_; }
  const Tensor& e() const { return e_; }
  const Tensor& xi() const { return xi_; }

  Quantizer& quantizer(QuantSite site) { return quantizers_[static_cast<std::size_t>(site)]; }
  const Quantizer& quantizer(QuantSite site) const {
    return quantizers_[static_cast<std::size_t>(site)];
  }

  // A, B, E, xi and the seven phi vectors (phi only when quantizing).
  std::vector<Tensor> parameters();
  // The gate logits: xi and, when quantizing, the seven phi vectors.
  std::vector<Tensor> gate_parameters();

 private:
  Tensor w0_;
  Tensor a_;   // [r x in]
  Tensor b_;   // [out x r]
  Tensor e_;   // [r]
  Tensor xi_;  // [r - 1]
  BLoraOptions options_;
  std::array<Quantizer, kNumQuantSites> quantizers_;
};

// Multi-head self-attention whose query/key/value projections are B-LoRA
// blocks; the output projection stays frozen and unquantized.
class AttentionLayer {
 public:
  AttentionLayer(std::size_t d_model, std::size_t heads, const BLoraOptions& options,
                 const QuantizerConfig* qconfig, Rng& rng);
  AttentionLayer(Tensor wq, Tensor wk, Tensor wv, Tensor wo, std::size_t heads,
                 const BLoraOptions& options, const QuantizerConfig* qconfig, Rng& rng);

  // x: [batch x seq x d] -> [batch x seq x d].
  Tensor forward(const Tensor& x, Mode mode, Rng& rng);

  BLoraLinear& query() { return wq_; }
  BLoraLinear& key() { return wk_; }
  BLoraLinear& value() { return wv_; }
  const BLoraLinear& query() const { return wq_; }
  const BLoraLinear& key() const { return wk_; }
  const BLoraLinear& value() const { return wv_; }
  const Tensor& output_weight() const { return wo_; }
  std::size_t heads() const { return heads_; }
  std::size_t d_model() const { return wo_.dim(0); }

 private:
  BLoraLinear wq_;
  BLoraLinear wk_;
  BLoraLinear wv_;
  Tensor wo_;
  std::size_t heads_;
};

// Random frozen weight with entries N(0, 1/in).
Tensor random_weight(std::size_t out, std::size_t in, Rng& rng);

}  // namespace blora
