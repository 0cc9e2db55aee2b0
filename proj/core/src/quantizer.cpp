#include "blora/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "blora/errors.hpp"
#include "blora/ops.hpp"

namespace blora {

namespace {

double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double level_temperature(const QuantizerConfig& config, std::size_t level) {
  return config.temperature_per_bitwidth ? static_cast<double>(kRefinementBits[level])
                                         : config.temperature;
}

}  // namespace

bool is_supported_bitwidth(int bits) {
  return std::find(kAllBits.begin(), kAllBits.end(), bits) != kAllBits.end();
}

void QuantizerConfig::validate() const {
  if (!(zeta1 < 0.0)) throw ConfigError("zeta1 must be negative");
  if (!(zeta2 > 1.0)) throw ConfigError("zeta2 must exceed 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

std::string_view to_string(RangeMode mode) {
  return mode == RangeMode::PerCallMinMax ? "per-call-minmax" : "ema-minmax";
}

RangeMode range_mode_from_string(std::string_view text) {
  if (text == "per-call-minmax") return RangeMode::PerCallMinMax;
  if (text == "ema-minmax") return RangeMode::EmaMinMax;
  throw ConfigError("unknown range_mode '" + std::string(text) + "'");
}

QuantizerState QuantizerState::make(RangeMode mode, double phi_init) {
  QuantizerState state;
  state.phi = Tensor::full({4}, phi_init, true);
  state.range_mode = mode;
  return state;
}

std::array<double, 4> GateDraw::nested_values() const {
  std::array<double, 4> out{};
  double running = 1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    running *= z[i].defined() ? z[i].item() : 0.0;
    out[i] = running;
  }
  return out;
}

GateDraw fixed_gates(const std::array<double, 4>& values) {
  GateDraw draw;
  draw.hard = true;
  for (std::size_t i = 0; i < 4; ++i) {
    if (values[i] != 0.0 && values[i] != 1.0) throw DomainError("hard gates must be 0 or 1");
    draw.z[i] = Tensor::scalar(values[i]);
  }
  return draw;
}

double step_size_closed_form(double alpha, double beta, int bits) {
  if (!is_supported_bitwidth(bits)) throw DomainError("unsupported bitwidth " + std::to_string(bits));
  if (!(alpha < beta)) throw RangeError("step_size: alpha must be below beta");
  return (beta - alpha) / (std::ldexp(1.0, bits) - 1.0);
}

double step_size(double alpha, double beta, int bits) {
  if (!is_supported_bitwidth(bits)) throw DomainError("unsupported bitwidth " + std::to_string(bits));
  if (!(alpha < beta)) throw RangeError("step_size: alpha must be below beta");
  if (bits == 2) return (beta - alpha) / 3.0;
  const int half = bits / 2;
  return step_size(alpha, beta, half) / (std::ldexp(1.0, half) + 1.0);
}

GateDraw sample_gates(const QuantizerState& state, const QuantizerConfig& config, Rng& rng,
                      Mode mode) {
  if (mode != Mode::Train) throw ModeError("sample_gates is only defined in training mode");
  GateDraw draw;
  for (std::size_t i = 0; i < 4; ++i) {
    draw.u[i] = rng.uniform_open();
    draw.z[i] = relaxed_gate(element(state.phi, i), draw.u[i], config, i);
  }
  return draw;
}

Tensor relaxed_gate(const Tensor& phi, double u, const QuantizerConfig& config, std::size_t level) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("relaxed_gate: u must lie in (0, 1)");
  if (level >= kRefinementBits.size()) throw DomainError("relaxed_gate: level out of range");
  const double lo = config.verbatim_alg2 ? config.zeta2 : config.zeta1;
  const double span = config.verbatim_alg2 ? config.zeta1 - config.zeta2
                                           : config.zeta2 - config.zeta1;
  const double logistic = std::log(u / (1.0 - u));
  const Tensor relaxed =
      sigmoid(scale(add_scalar(phi, logistic), 1.0 / level_temperature(config, level)));
  return clip(add_scalar(scale(relaxed, span), lo), 0.0, 1.0);
}

GateDraw eval_gates(const QuantizerState& state, const QuantizerConfig& config) {
  std::array<double, 4> values{};
  bool open = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const double phi = state.phi.at(i);
    const double temp = level_temperature(config, i);
    bool on;
    if (config.verbatim_alg2) {
      on = sigmoid_value(temp * std::log(-config.zeta2 / config.zeta1) - phi) < config.threshold;
    } else {
      on = sigmoid_value(phi - temp * std::log(-config.zeta1 / config.zeta2)) > config.threshold;
    }
    open = open && on;
    values[i] = open ? 1.0 : 0.0;
  }
  return fixed_gates(values);
}

std::pair<double, double> resolve_range(const Tensor& x, QuantizerState& state, Mode mode) {
  if (x.numel() == 0) throw ShapeError("quantize: empty tensor");
  const auto values = x.data();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (state.range_mode == RangeMode::EmaMinMax) {
    if (mode == Mode::Train) {
      if (!state.range_initialized) {
        state.alpha = lo;
        state.beta = hi;
        state.range_initialized = true;
      } else {
        const double m = state.ema_momentum;
        state.alpha = m * state.alpha + (1.0 - m) * lo;
        state.beta = m * state.beta + (1.0 - m) * hi;
      }
      lo = state.alpha;
      hi = state.beta;
    } else if (state.range_initialized) {
      lo = state.alpha;
      hi = state.beta;
    }
  }
  if (hi - lo < kDegenerateRange) {
    const double mid = 0.5 * (lo + hi);
    lo = mid - kDegenerateHalfWidth;
    hi = mid + kDegenerateHalfWidth;
  }
  if (state.range_mode == RangeMode::PerCallMinMax) {
    state.alpha = lo;
    state.beta = hi;
  }
  return {lo, hi};
}

Tensor quantize(const Tensor& x, const QuantizerState& state, const QuantizerConfig& config,
                const GateDraw& gates) {
  (void)config;
  if (!x.defined() || x.numel() == 0) throw ShapeError("quantize: empty tensor");
  double alpha = state.alpha;
  double beta = state.beta;
  if (!(alpha < beta)) throw RangeError("quantize: unresolved clipping range");

  const Tensor clipped = clip(x, alpha, beta);
  const double s2 = step_size(alpha, beta, 2);
  const Tensor base = scale(round_ste(scale(clipped, 1.0 / s2)), s2);

  const auto nested = gates.nested_values();
  std::size_t active = 0;  // number of leading levels with a nonzero nested gate
  while (active < 4 && nested[active] != 0.0) ++active;
  if (active == 0) return base;

  std::array<Tensor, 4> residuals;
  Tensor reconstructed = base;
  double step = s2;
  for (std::size_t i = 0; i < active; ++i) {
    const double half = std::ldexp(1.0, kRefinementBits[i] / 2);
    step = step / (half + 1.0);
    const Tensor error = sub(clipped, reconstructed);
    residuals[i] = scale(round_ste(scale(error, 1.0 / step)), step);
    if (i + 1 < active) reconstructed = add(reconstructed, residuals[i]);
  }

  // base + z4 (e4 + z8 (e8 + z16 (e16 + z32 e32)))
  Tensor inner = mul_by_scalar(residuals[active - 1], gates.z[active - 1]);
  for (std::size_t i = active - 1; i-- > 0;) {
    inner = mul_by_scalar(add(residuals[i], inner), gates.z[i]);
  }
  return add(base, inner);
}

Tensor gate_regularizer(const QuantizerState& state, const QuantizerConfig& config) {
  (void)config;
  if (!state.enabled) return Tensor::scalar(0.0);
  const Tensor probs = sigmoid(state.phi);
  Tensor running = element(probs, 0);
  Tensor total = running;
  for (std::size_t i = 1; i < 4; ++i) {
    running = mul(running, element(probs, i));
    total = add(total, running);
  }
  return total;
}

double expected_bitwidth(const QuantizerState& state, const QuantizerConfig& config, Mode mode) {
  if (!state.enabled) return 32.0;
  if (mode == Mode::Eval) return decided_bitwidth(state, config);
  double bits = 2.0;
  double running = 1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    running *= sigmoid_value(state.phi.at(i));
    bits += 0.5 * kRefinementBits[i] * running;
  }
  return bits;
}

int decided_bitwidth(const QuantizerState& state, const QuantizerConfig& config) {
  if (!state.enabled) return 32;
  const auto nested = eval_gates(state, config).nested_values();
  int bits = 2;
  for (std::size_t i = 0; i < 4; ++i) {
    if (nested[i] == 0.0) break;
    bits = kRefinementBits[i];
  }
  return bits;
}

Quantizer::Quantizer(RangeMode mode, const QuantizerConfig* config, double phi_init)
    : state_(QuantizerState::make(mode, phi_init)), config_(config) {}

void Quantizer::pin_draw(GateDraw draw) {
  pinned_draw_ = std::move(draw);
  pinned_ = true;
}

Tensor Quantizer::operator()(const Tensor& x, Mode mode, Rng& rng) {
  if (!state_.enabled) return x;
  // EMA state keeps the raw average; the widened range only applies per call.
  QuantizerState view = state_;
  std::tie(view.alpha, view.beta) = resolve_range(x, state_, mode);
  if (pinned_) {
    last_draw_ = pinned_draw_;
  } else if (mode == Mode::Train) {
    last_draw_ = sample_gates(state_, *config_, rng, mode);
  } else {
    last_draw_ = eval_gates(state_, *config_);
  }
  return quantize(x, view, *config_, last_draw_);
}

int Quantizer::decided_bits() const { return decided_bitwidth(state_, *config_); }

}  // namespace blora
