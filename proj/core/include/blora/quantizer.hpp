#pragma once

#include <array>
#include <string>
#include <string_view>

#include "blora/rng.hpp"
#include "blora/tensor.hpp"

namespace blora {

enum class Mode { Train, Eval };

// Refinement levels gated on top of the always-on 2-bit base grid.
inline constexpr std::array<int, 4> kRefinementBits{4, 8, 16, 32};
inline constexpr std::array<int, 5> kAllBits{2, 4, 8, 16, 32};

bool is_supported_bitwidth(int bits);

struct QuantizerConfig {
  double zeta1 = -0.1;
  double zeta2 = 1.1;
  double threshold = 0.34;
  double temperature = 2.0 / 3.0;
  // Reproduce the printed stretch `s(zeta1 - zeta2) + zeta2` and the printed
  // eval indicator `sigma(T log(-zeta2/zeta1) - phi) < t`.
  bool verbatim_alg2 = false;
  // Divide the logistic noise by the bit count instead of `temperature`.
  bool temperature_per_bitwidth = false;

  void validate() const;  // throws ConfigError
};

enum class RangeMode { PerCallMinMax, EmaMinMax };

std::string_view to_string(RangeMode mode);
RangeMode range_mode_from_string(std::string_view text);

inline constexpr double kPhiInit = 6.0;
inline constexpr double kDegenerateRange = 1e-8;
inline constexpr double kDegenerateHalfWidth = 1e-4;

struct QuantizerState {
  Tensor phi;  // [4] logits for the 4/8/16/32-bit refinement gates
  double alpha = 0.0;
  double beta = 0.0;
  RangeMode range_mode = RangeMode::PerCallMinMax;
  double ema_momentum = 0.9;
  bool range_initialized = false;
  // A disabled quantizer is the identity (used for full-precision baselines).
  bool enabled = true;

  static QuantizerState make(RangeMode mode, double phi_init = kPhiInit);
};

struct GateDraw {
  // Per-level gate value before nesting is applied. Relaxed values in
  // training, exact 0/1 constants in eval.
  std::array<Tensor, 4> z;
  std::array<double, 4> u{};  // uniform draws (training only)
  bool hard = false;

  // z_4 * ... * z_b for each level, as plain numbers.
  std::array<double, 4> nested_values() const;
};

// Builds a hard draw from explicit 0/1 values (tests, what-if audits).
GateDraw fixed_gates(const std::array<double, 4>& values);

// Step size of the `bits` grid over [alpha, beta], computed by halving the
// bitwidth recursively down to the 2-bit base.
double step_size(double alpha, double beta, int bits);
// (beta - alpha) / (2^bits - 1).
double step_size_closed_form(double alpha, double beta, int bits);

GateDraw sample_gates(const QuantizerState& state, const QuantizerConfig& config, Rng& rng,
                      Mode mode = Mode::Train);
// One stretched-and-clamped gate for logit `phi` (shape [1]) and uniform
// draw `u`; `level` indexes kRefinementBits.
Tensor relaxed_gate(const Tensor& phi, double u, const QuantizerConfig& config, std::size_t level);
GateDraw eval_gates(const QuantizerState& state, const QuantizerConfig& config);

// Updates (EMA mode, training) or reads the clipping range for `x`, widening
// degenerate ranges. Returns the resolved [alpha, beta].
std::pair<double, double> resolve_range(const Tensor& x, QuantizerState& state, Mode mode);

// Residual multi-bitwidth quantization of `x` under an already-resolved range.
Tensor quantize(const Tensor& x, const QuantizerState& state, const QuantizerConfig& config,
                const GateDraw& gates);

// Sum over levels of the nested probability that the level is active.
Tensor gate_regularizer(const QuantizerState& state, const QuantizerConfig& config);

// Expected bits under the nested gate probabilities (Train) or the decided
// bitwidth under eval gates (Eval).
double expected_bitwidth(const QuantizerState& state, const QuantizerConfig& config, Mode mode);
int decided_bitwidth(const QuantizerState& state, const QuantizerConfig& config);

// A quantizer site: state plus the draw-and-apply sequence used in forward passes.
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(RangeMode mode, const QuantizerConfig* config, double phi_init = kPhiInit);

  Tensor operator()(const Tensor& x, Mode mode, Rng& rng);

  QuantizerState& state() { return state_; }
  const QuantizerState& state() const { return state_; }
  const QuantizerConfig& config() const { return *config_; }
  // Last gate draw, kept for diagnostics and loss-decomposition checks.
  const GateDraw& last_draw() const { return last_draw_; }
  // Replays `draw` on the next call instead of sampling.
  void pin_draw(GateDraw draw);
  void unpin_draw() { pinned_ = false; }

  Tensor regularizer() const { return gate_regularizer(state_, *config_); }
  double expected_bits(Mode mode) const { return expected_bitwidth(state_, *config_, mode); }
  int decided_bits() const;

 private:
  QuantizerState state_;
  const QuantizerConfig* config_ = nullptr;
  GateDraw last_draw_;
  GateDraw pinned_draw_;
  bool pinned_ = false;
};

}  // namespace blora
