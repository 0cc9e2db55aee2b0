#include "blora/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "blora/errors.hpp"
#include "json_reader.hpp"

namespace blora::audit {

using nlohmann::json;
using detail::ObjectReader;
namespace cx = complexity;

namespace {

Perimeter perimeter_from_string(const std::string& text, const std::string& where) {
  if (text == "attention") return Perimeter::Attention;
  if (text == "encoder") return Perimeter::Encoder;
  throw ConfigError("key '" + where + "': unknown perimeter '" + text + "'");
}

int read_bits(ObjectReader& r, const std::string& key, int fallback) {
  if (!r.has(key)) return fallback;
  const auto v = r.integer(key);
  if (!is_supported_bitwidth(static_cast<int>(v))) {
    throw ConfigError("key '" + r.where(key) + "' must be one of 2, 4, 8, 16, 32");
  }
  return static_cast<int>(v);
}

cx::SiteSpec site_from_json(const json& doc, const std::string& where) {
  ObjectReader r(doc, where);
  cx::SiteSpec s;
  s.name = r.string("name");
  if (r.has("kind")) {
    const std::string kind = r.string("kind");
    try {
      s.kind = cx::site_kind_from_string(kind);
    } catch (const std::exception&) {
      throw ConfigError("key '" + r.where("kind") + "': unknown site kind '" + kind + "'");
    }
  }
  s.b_w = read_bits(r, "b_w", 32);
  s.b_a = read_bits(r, "b_a", 32);
  if (r.has("r")) s.r = r.integer("r");
  if (r.has("layer")) s.layer = static_cast<int>(r.integer("layer"));
  if (r.has("bits")) {
    auto b = r.object("bits");
    cx::AdapterBits bits;
    bits.W0 = read_bits(b, "W0", 32);
    bits.A = read_bits(b, "A", 32);
    bits.B = read_bits(b, "B", 32);
    bits.E = read_bits(b, "E", 32);
    bits.hA = read_bits(b, "hA", 32);
    bits.hE = read_bits(b, "hE", 32);
    bits.out = read_bits(b, "out", 32);
    b.finish();
    s.bits = bits;
  }
  r.finish();
  return s;
}

MethodConfig method_from_json(const json& doc, const std::string& where) {
  ObjectReader r(doc, where);
  const std::string name = r.string("name");
  if (r.has("preset")) {
    const std::string preset = r.string("preset");
    auto method = cx::preset_method(preset);
    if (!method) throw ConfigError("key '" + r.where("preset") + "': unknown preset '" + preset + "'");
    if (r.has("sites")) throw ConfigError("'" + where + "' has both 'preset' and 'sites'");
    r.finish();
    method->name = name;
    return *method;
  }
  MethodConfig method{name, {}};
  const auto& sites = r.array("sites");
  for (std::size_t i = 0; i < sites.size(); ++i) {
    method.sites.push_back(site_from_json(sites[i], r.where("sites") + "[" + std::to_string(i) + "]"));
  }
  r.finish();
  return method;
}

Count positive(ObjectReader& r, const std::string& key, Count fallback) {
  if (!r.has(key)) return fallback;
  const Count v = r.integer(key);
  if (v < 0) throw ConfigError("key '" + r.where(key) + "' must be non-negative");
  return v;
}

std::string format_pct(double pct) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.2f%%", round_pct(pct));
  return buffer;
}

}  // namespace

double round_pct(double pct) { return std::round(pct * 100.0) / 100.0; }

AuditConfig audit_config_from_json(const json& doc) {
  AuditConfig config;
  ObjectReader top(doc, "");
  detail::check_schema(top, false);
  if (top.has("dims")) {
    auto d = top.object("dims");
    config.dims.d = positive(d, "d", config.dims.d);
    config.dims.l_seq = positive(d, "l_seq", config.dims.l_seq);
    config.dims.h = positive(d, "h", config.dims.h);
    config.dims.e = positive(d, "e", config.dims.e);
    config.dims.d_i = positive(d, "d_i", config.dims.d_i);
    config.dims.n_layers = positive(d, "n_layers", config.dims.n_layers);
    config.dims.r = positive(d, "r", config.dims.r);
    d.finish();
  }
  if (top.has("attention")) {
    const std::string kind = top.string("attention");
    try {
      config.attention = cx::attention_kind_from_string(kind);
    } catch (const std::exception&) {
      throw ConfigError("key 'attention': unknown attention kind '" + kind + "'");
    }
  }
  if (top.has("methods")) {
    const auto& methods = top.array("methods");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      config.methods.push_back(method_from_json(methods[i], "methods[" + std::to_string(i) + "]"));
    }
  }
  if (top.has("sites")) {
    MethodConfig method{"config", {}};
    top.string("name", method.name);
    const auto& sites = top.array("sites");
    for (std::size_t i = 0; i < sites.size(); ++i) {
      method.sites.push_back(site_from_json(sites[i], "sites[" + std::to_string(i) + "]"));
    }
    config.methods.push_back(std::move(method));
  } else if (top.has("name")) {
    throw ConfigError("key 'name' is only meaningful together with 'sites'");
  }
  if (top.has("baseline")) config.baseline = top.string("baseline");
  if (top.has("expectations")) {
    const auto& list = top.array("expectations");
    for (std::size_t i = 0; i < list.size(); ++i) {
      ObjectReader r(list[i], "expectations[" + std::to_string(i) + "]");
      Expectation e;
      e.method = r.string("method");
      if (r.has("perimeter")) e.perimeter = perimeter_from_string(r.string("perimeter"), r.where("perimeter"));
      e.target_pct = r.number("target_pct");
      r.number("tolerance_pp", e.tolerance_pp);
      r.finish();
      config.expectations.push_back(e);
    }
  }
  if (top.has("params")) {
    const auto& list = top.array("params");
    for (std::size_t i = 0; i < list.size(); ++i) {
      ObjectReader r(list[i], "params[" + std::to_string(i) + "]");
      ParamQuery q;
      q.name = r.string("name");
      const std::string formula = r.string("formula");
      if (formula == "lora") {
        q.formula = ParamFormula::Lora;
      } else if (formula == "blora") {
        q.formula = ParamFormula::BLora;
      } else {
        throw ConfigError("key '" + r.where("formula") + "': unknown formula '" + formula + "'");
      }
      q.d = positive(r, "d", q.d);
      q.d_i = positive(r, "d_i", q.d_i);
      q.n_layers = positive(r, "n_layers", q.n_layers);
      q.r = positive(r, "r", q.r);
      r.finish();
      config.params.push_back(q);
    }
  }
  top.finish();
  config.dims.validate();
  if (config.methods.empty() && config.expectations.empty() && config.params.empty()) {
    throw ConfigError("audit config needs 'methods', 'sites', 'expectations' or 'params'");
  }
  return config;
}

AuditConfig audit_config_from_report(const RunReport& report) {
  const RunConfig& rc = report.config;
  if (rc.task.kind != TaskKind::SequenceClassification) {
    throw ConfigError("audit from a run report needs the attention classifier host");
  }
  AuditConfig config;
  config.dims.d = static_cast<Count>(rc.model.d_model);
  config.dims.l_seq = static_cast<Count>(rc.task.seq_len);
  config.dims.h = static_cast<Count>(rc.model.heads);
  config.dims.e = 0;
  config.dims.d_i = static_cast<Count>(rc.model.d_ff);
  config.dims.n_layers = static_cast<Count>(rc.model.layers);
  config.dims.r = static_cast<Count>(rc.adapter.rank);
  config.attention = AttentionKind::Self;
  MethodConfig trained{"trained_seed" + std::to_string(report.seed), {}};
  for (const BlockRecord& b : report.blocks) {
    cx::SiteSpec s;
    s.name = b.site;
    s.kind = cx::SiteKind::SvdLora;
    s.r = static_cast<Count>(b.effective_rank);
    s.layer = static_cast<int>(b.layer);
    cx::AdapterBits bits;
    const auto q = [&](QuantSite site) { return b.quantizers[static_cast<std::size_t>(site)].decided_bits; };
    bits.W0 = q(QuantSite::W0);
    bits.A = q(QuantSite::A);
    bits.B = q(QuantSite::B);
    bits.E = q(QuantSite::E);
    bits.hA = q(QuantSite::hA);
    bits.hE = q(QuantSite::hE);
    bits.out = q(QuantSite::out);
    s.bits = bits;
    trained.sites.push_back(s);
  }
  config.methods.push_back(std::move(trained));
  config.baseline = "svd_lora_r" + std::to_string(rc.adapter.rank);
  return config;
}

bool AuditResult::all_within_tolerance() const {
  for (const auto& e : expectations) {
    if (!e.within_tolerance) return false;
  }
  return true;
}

const MethodResult& AuditResult::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.counts.name == name) return m;
  }
  throw ConfigError("audit has no method '" + name + "'");
}

AuditResult run_audit(const AuditConfig& config, const std::optional<std::string>& baseline_override) {
  config.dims.validate();
  AuditResult result;
  result.dims = config.dims;
  result.attention = config.attention;

  for (const ParamQuery& q : config.params) {
    ParamResult p;
    p.query = q;
    p.value = q.formula == ParamFormula::Lora ? cx::params_lora(q.d, q.d_i, q.n_layers, q.r)
                                              : cx::params_blora(q.d, q.n_layers, q.r);
    p.millions = cx::format_millions(p.value);
    result.params.push_back(p);
  }
  if (config.methods.empty() && config.expectations.empty()) return result;

  const std::optional<std::string> baseline = baseline_override ? baseline_override : config.baseline;
  if (!baseline) throw ConfigError("no baseline given (set 'baseline' or pass --baseline)");

  const auto find_method = [&](const std::string& name) -> std::optional<MethodConfig> {
    for (const auto& m : config.methods) {
      if (m.name == name) return m;
    }
    return cx::preset_method(name);
  };
  const auto base_method = find_method(*baseline);
  if (!base_method) throw ConfigError("baseline '" + *baseline + "' names neither a method nor a preset");
  result.baseline = *baseline;

  const auto evaluate = [&](const MethodConfig& method, AttentionKind kind, const CountReport& base) {
    MethodResult m;
    m.counts = cx::count_method(config.dims, kind, method);
    m.attention_pct = cx::relative_bops(m.counts, base, Perimeter::Attention);
    m.encoder_pct = cx::relative_bops(m.counts, base, Perimeter::Encoder);
    return m;
  };
  const CountReport base = cx::count_method(config.dims, config.attention, *base_method);
  result.methods.push_back(evaluate(*base_method, config.attention, base));
  for (const auto& m : config.methods) {
    if (m.name == result.baseline) continue;
    result.methods.push_back(evaluate(m, config.attention, base));
  }

  for (const Expectation& e : config.expectations) {
    const auto method = find_method(e.method);
    if (!method) throw ConfigError("expectation names unknown method '" + e.method + "'");
    ExpectationResult out;
    out.expectation = e;
    const MethodResult m = evaluate(*method, config.attention, base);
    out.actual_pct = e.perimeter == Perimeter::Attention ? m.attention_pct : m.encoder_pct;
    out.deviation_pp = out.actual_pct - e.target_pct;
    out.within_tolerance = std::abs(out.deviation_pp) <= e.tolerance_pp;
    const bool listed = std::any_of(result.methods.begin(), result.methods.end(),
                                    [&](const MethodResult& r) { return r.counts.name == method->name; });
    if (!listed) result.methods.push_back(m);
    if (config.attention == AttentionKind::Disentangled) {
      const CountReport plain_base = cx::count_method(config.dims, AttentionKind::Self, *base_method);
      const MethodResult plain = evaluate(*method, AttentionKind::Self, plain_base);
      out.self_attention_pct = e.perimeter == Perimeter::Attention ? plain.attention_pct : plain.encoder_pct;
    }
    if (!out.within_tolerance) {
      out.note = "discrepancy: " + e.method + " vs " + result.baseline + " over the " +
                 std::string(cx::to_string(e.perimeter)) + " perimeter is " +
                 format_pct(out.actual_pct) + ", " + format_pct(std::abs(out.deviation_pp)) +
                 " away from the " + format_pct(e.target_pct) + " target (tolerance " +
                 format_pct(e.tolerance_pp) + ")";
      if (out.self_attention_pct) {
        out.note += "; counting plain self-attention layers instead gives " +
                    format_pct(*out.self_attention_pct);
      }
      out.note += "; see the per-site breakdown";
    }
    result.expectations.push_back(out);
  }
  return result;
}

json to_json(const AuditResult& result) {
  json doc;
  doc["schema"] = 1;
  doc["dims"] = {{"d", result.dims.d},     {"l_seq", result.dims.l_seq}, {"h", result.dims.h},
                 {"e", result.dims.e},     {"d_i", result.dims.d_i},
                 {"n_layers", result.dims.n_layers}, {"r", result.dims.r}};
  doc["attention"] = std::string(cx::to_string(result.attention));
  doc["baseline"] = result.baseline;
  json methods = json::array();
  for (const auto& m : result.methods) {
    json sites = json::array();
    for (const auto& s : m.counts.sites) {
      sites.push_back({{"name", s.name},
                       {"kind", std::string(cx::to_string(s.kind))},
                       {"macs", s.macs},
                       {"bops", s.bops},
                       {"perimeter", s.attention ? "attention" : "encoder"}});
    }
    methods.push_back(
        {{"name", m.counts.name},
         {"sites", sites},
         {"totals",
          {{"attention", {{"macs", m.counts.attention.macs}, {"bops", m.counts.attention.bops}}},
           {"encoder", {{"macs", m.counts.encoder.macs}, {"bops", m.counts.encoder.bops}}}}},
         {"relative_bops_pct",
          {{"attention", round_pct(m.attention_pct)}, {"encoder", round_pct(m.encoder_pct)}}}});
  }
  doc["methods"] = methods;
  json expectations = json::array();
  for (const auto& e : result.expectations) {
    json item = {{"method", e.expectation.method},
                 {"perimeter", std::string(cx::to_string(e.expectation.perimeter))},
                 {"target_pct", e.expectation.target_pct},
                 {"tolerance_pp", e.expectation.tolerance_pp},
                 {"actual_pct", round_pct(e.actual_pct)},
                 {"deviation_pp", round_pct(e.deviation_pp)},
                 {"within_tolerance", e.within_tolerance}};
    if (e.self_attention_pct) item["self_attention_pct"] = round_pct(*e.self_attention_pct);
    if (!e.note.empty()) item["note"] = e.note;
    expectations.push_back(item);
  }
  doc["expectations"] = expectations;
  json params = json::array();
  for (const auto& p : result.params) {
    params.push_back({{"name", p.query.name},
                      {"formula", p.query.formula == ParamFormula::Lora ? "lora" : "blora"},
                      {"d", p.query.d},
                      {"d_i", p.query.d_i},
                      {"n_layers", p.query.n_layers},
                      {"r", p.query.r},
                      {"value", p.value},
                      {"millions", p.millions}});
  }
  doc["params"] = params;
  return doc;
}

namespace {

void print_breakdown(const MethodResult& m, std::ostream& out) {
  out << "  per-site breakdown of " << m.counts.name << " (summed over layers):\n";
  char line[160];
  std::snprintf(line, sizeof line, "    %-10s %-10s %-9s %22s %26s\n", "site", "kind", "perimeter",
                "MACs", "BOPs");
  out << line;
  for (const auto& s : m.counts.sites) {
    std::snprintf(line, sizeof line, "    %-10s %-10s %-9s %22lld %26lld\n", s.name.c_str(),
                  std::string(cx::to_string(s.kind)).c_str(), s.attention ? "attention" : "encoder",
                  static_cast<long long>(s.macs), static_cast<long long>(s.bops));
    out << line;
  }
  std::snprintf(line, sizeof line, "    attention total MACs %lld BOPs %lld; encoder total MACs %lld BOPs %lld\n",
                static_cast<long long>(m.counts.attention.macs),
                static_cast<long long>(m.counts.attention.bops),
                static_cast<long long>(m.counts.encoder.macs),
                static_cast<long long>(m.counts.encoder.bops));
  out << line;
}

}  // namespace

void print_audit(const AuditResult& result, std::ostream& out) {
  for (const auto& p : result.params) {
    out << "params " << p.query.name << ": " << p.value << " (" << p.millions << ")\n";
  }
  if (result.methods.empty()) return;
  out << "attention: " << cx::to_string(result.attention) << ", baseline: " << result.baseline
      << " = 100%\n";
  for (const auto& m : result.methods) {
    out << "  " << m.counts.name << ": attention " << format_pct(m.attention_pct) << ", encoder "
        << format_pct(m.encoder_pct) << "\n";
  }
  for (const auto& e : result.expectations) {
    out << "expect " << e.expectation.method << " (" << cx::to_string(e.expectation.perimeter)
        << "): " << format_pct(e.actual_pct) << ", |ratio - " << format_pct(e.expectation.target_pct)
        << "| = " << format_pct(std::abs(e.deviation_pp)) << " "
        << (e.within_tolerance ? "within" : "OUTSIDE") << " tolerance "
        << format_pct(e.expectation.tolerance_pp) << "\n";
    if (e.self_attention_pct) {
      out << "  plain self-attention perimeter: " << format_pct(*e.self_attention_pct) << "\n";
    }
    if (!e.within_tolerance) {
      out << "  " << e.note << "\n";
      print_breakdown(result.method(e.expectation.method), out);
      print_breakdown(result.method(result.baseline), out);
    }
  }
}

}  // namespace blora::audit
