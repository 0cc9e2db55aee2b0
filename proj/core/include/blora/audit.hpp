#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blora/complexity.hpp"
#include "blora/trainer.hpp"

// Relative-BOP audits over named methods, plus parameter-count tables.
namespace blora::audit {

using complexity::AttentionKind;
using complexity::Count;
using complexity::CountReport;
using complexity::MethodConfig;
using complexity::ModelDims;
using complexity::Perimeter;

// A target ratio for one method against the baseline.
struct Expectation {
  std::string method;
  Perimeter perimeter = Perimeter::Attention;
  double target_pct = 100.0;
  double tolerance_pp = 1.0;
};

enum class ParamFormula { Lora, BLora };

struct ParamQuery {
  std::string name;
  ParamFormula formula = ParamFormula::BLora;
  Count d = 768;
  Count d_i = 3072;
  Count n_layers = 12;
  Count r = 8;
};

struct AuditConfig {
  ModelDims dims;
  AttentionKind attention = AttentionKind::Self;
  std::vector<MethodConfig> methods;
  std::optional<std::string> baseline;
  std::vector<Expectation> expectations;
  std::vector<ParamQuery> params;
};

AuditConfig audit_config_from_json(const nlohmann::json& doc);

// Toy-scale audit of a trained classifier: every adapted projection becomes
// an SVD-LoRA site with its effective rank and decided bitwidths. The
// baseline defaults to full-precision SVD-LoRA at the configured rank.
AuditConfig audit_config_from_report(const RunReport& report);

struct ExpectationResult {
  Expectation expectation;
  double actual_pct = 0.0;
  double deviation_pp = 0.0;
  bool within_tolerance = false;
  // Same ratio with plain self-attention layers, for perimeter diagnosis.
  std::optional<double> self_attention_pct;
  std::string note;
};

struct ParamResult {
  ParamQuery query;
  Count value = 0;
  std::string millions;
};

struct MethodResult {
  CountReport counts;
  double attention_pct = 0.0;
  double encoder_pct = 0.0;
};

struct AuditResult {
  ModelDims dims;
  AttentionKind attention = AttentionKind::Self;
  std::string baseline;
  std::vector<MethodResult> methods;  // baseline first
  std::vector<ExpectationResult> expectations;
  std::vector<ParamResult> params;

  bool all_within_tolerance() const;
  const MethodResult& method(const std::string& name) const;
};

// `baseline_override` wins over the config's baseline. Throws ConfigError
// when no baseline is given or it names neither a method nor a preset.
AuditResult run_audit(const AuditConfig& config,
                      const std::optional<std::string>& baseline_override = std::nullopt);

// Percentages rounded half away from zero to two decimals.
double round_pct(double pct);

nlohmann::json to_json(const AuditResult& result);
// Human-readable summary. Expectations outside tolerance are followed by the
// full per-site breakdown of the method and the baseline.
void print_audit(const AuditResult& result, std::ostream& out);

}  // namespace blora::audit
