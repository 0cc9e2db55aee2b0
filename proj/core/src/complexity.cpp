#include "blora/complexity.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <stdexcept>

#include "blora/errors.hpp"

namespace blora::complexity {

namespace {

bool valid_bits(int bits) {
  return bits == 2 || bits == 4 || bits == 8 || bits == 16 || bits == 32;
}

void require_bits(int bits, const std::string& where) {
  if (!valid_bits(bits)) {
    throw ConfigError(where + ": bitwidth " + std::to_string(bits) +
                      " not in {2, 4, 8, 16, 32}");
  }
}

void require_positive(Count value, const char* what) {
  if (value <= 0) throw ConfigError(std::string(what) + " must be positive");
}

}  // namespace

void ModelDims::validate() const {
  require_positive(d, "d");
  require_positive(l_seq, "l_seq");
  require_positive(h, "h");
  require_positive(d_i, "d_i");
  require_positive(n_layers, "n_layers");
  if (e < 0) throw ConfigError("e must be non-negative");
  if (r < 0) throw ConfigError("r must be non-negative");
  if (d % h != 0) {
    throw ConfigError("heads h=" + std::to_string(h) + " do not divide hidden size d=" +
                      std::to_string(d));
  }
}

Count checked_mul(Count a, Count b) {
  Count out;
  if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("operation count overflow");
  return out;
}

Count checked_add(Count a, Count b) {
  Count out;
  if (__builtin_add_overflow(a, b, &out)) throw std::overflow_error("operation count overflow");
  return out;
}

Count macs_linear(Count n_inputs, Count n_outputs) { return checked_mul(n_inputs, n_outputs); }

Count macs_self_attention(const ModelDims& dims) {
  dims.validate();
  const Count proj = checked_mul(3, checked_mul(checked_mul(dims.d, dims.d), dims.l_seq));
  const Count scores = checked_mul(
      2, checked_mul(checked_mul(checked_mul(dims.l_seq, dims.l_seq), dims.head_dim()), dims.h));
  return checked_add(checked_add(proj, scores), 1);
}

Count macs_disentangled_attention(const ModelDims& dims) {
  const Count base = macs_self_attention(dims) - 1;
  const Count pos = checked_mul(2, checked_mul(checked_mul(dims.d, dims.d), dims.e));
  const Count rel = checked_mul(
      2, checked_mul(checked_mul(checked_mul(dims.l_seq, dims.e), dims.head_dim()), dims.h));
  return checked_add(checked_add(checked_add(base, pos), rel), 3);
}

Count macs_lora(Count n_inputs, Count n_outputs, Count d_out, Count r) {
  return checked_add(macs_linear(n_inputs, n_outputs),
                     checked_mul(checked_add(checked_mul(2, r), 1), d_out));
}

Count macs_lora_rect(Count n_inputs, Count n_outputs, Count r) {
  Count total = macs_linear(n_inputs, n_outputs);
  total = checked_add(total, checked_mul(r, n_inputs));
  total = checked_add(total, checked_mul(r, n_outputs));
  return checked_add(total, n_outputs);
}

Count flops(Count macs) { return checked_mul(2, macs); }

Count bops(Count macs, int b_w, int b_a) {
  require_bits(b_w, "bops");
  require_bits(b_a, "bops");
  return checked_mul(checked_mul(macs, b_w), b_a);
}

Count params_lora(Count d, Count d_i, Count n_layers, Count r) {
  return checked_mul(checked_mul(checked_mul(2, n_layers), r),
                     checked_add(checked_mul(5, d), d_i));
}

Count params_blora(Count d, Count n_layers, Count r) {
  return checked_mul(checked_mul(checked_mul(6, n_layers), r), d);
}

std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::Self ? "self" : "disentangled";
}

AttentionKind attention_kind_from_string(std::string_view text) {
  if (text == "self") return AttentionKind::Self;
  if (text == "disentangled") return AttentionKind::Disentangled;
  throw ConfigError("unknown attention kind '" + std::string(text) + "'");
}

std::string_view to_string(Perimeter perimeter) {
  return perimeter == Perimeter::Attention ? "attention" : "encoder";
}

std::string_view to_string(SiteKind kind) {
  switch (kind) {
    case SiteKind::Linear: return "linear";
    case SiteKind::Lora: return "lora";
    case SiteKind::SvdLora: return "svd_lora";
    case SiteKind::Scores: return "scores";
    case SiteKind::Context: return "context";
    case SiteKind::Scale: return "scale";
    case SiteKind::PosProj: return "pos_proj";
    case SiteKind::RelScores: return "rel_scores";
  }
  return "?";
}

SiteKind site_kind_from_string(std::string_view text) {
  for (SiteKind k : {SiteKind::Linear, SiteKind::Lora, SiteKind::SvdLora, SiteKind::Scores,
                     SiteKind::Context, SiteKind::Scale, SiteKind::PosProj, SiteKind::RelScores}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown site kind '" + std::string(text) + "'");
}

bool is_projection(SiteKind kind) {
  return kind == SiteKind::Linear || kind == SiteKind::Lora || kind == SiteKind::SvdLora;
}

namespace {

struct SiteTemplate {
  std::string name;
  SiteKind kind;
  Count n_inputs = 0;  // projections only
  Count n_outputs = 0;
  bool attention = true;
};

std::vector<SiteTemplate> layer_template(const ModelDims& dims, AttentionKind kind) {
  std::vector<SiteTemplate> sites{
      {"Wq", SiteKind::Linear, dims.d, dims.d},   {"Wk", SiteKind::Linear, dims.d, dims.d},
      {"Wv", SiteKind::Linear, dims.d, dims.d},   {"scores", SiteKind::Scores},
      {"context", SiteKind::Context},             {"scale", SiteKind::Scale},
  };
  if (kind == AttentionKind::Disentangled) {
    sites.push_back({"pos_k", SiteKind::PosProj});
    sites.push_back({"pos_q", SiteKind::PosProj});
    sites.push_back({"c2p", SiteKind::RelScores});
    sites.push_back({"p2c", SiteKind::RelScores});
    sites.push_back({"pos_scale", SiteKind::Scale});
  }
  sites.push_back({"Wo", SiteKind::Linear, dims.d, dims.d, false});
  sites.push_back({"Wf1", SiteKind::Linear, dims.d, dims.d_i, false});
  sites.push_back({"Wf2", SiteKind::Linear, dims.d_i, dims.d, false});
  return sites;
}

struct Contribution {
  Count macs = 0;
  Count bops = 0;
  void add(Count m, int b1, int b2) {
    macs = checked_add(macs, m);
    bops = checked_add(bops, complexity::bops(m, b1, b2));
  }
};

Contribution count_site(const ModelDims& dims, const SiteTemplate& site, SiteKind kind,
                        const SiteSpec* spec) {
  const int b_w = spec ? spec->b_w : 32;
  const int b_a = spec ? spec->b_a : 32;
  const Count r = spec ? spec->r : 0;
  const Count l = dims.l_seq;
  const Count mixing = checked_mul(dims.head_dim(), dims.h);
  Contribution c;
  switch (kind) {
    case SiteKind::Linear:
      c.add(checked_mul(macs_linear(site.n_inputs, site.n_outputs), l), b_w, b_a);
      break;
    case SiteKind::Lora: {
      const Count per_token = site.n_inputs == site.n_outputs
                                  ? macs_lora(site.n_inputs, site.n_outputs, site.n_outputs, r)
                                  : macs_lora_rect(site.n_inputs, site.n_outputs, r);
      c.add(checked_mul(per_token, l), b_w, b_a);
      break;
    }
    case SiteKind::SvdLora: {
      AdapterBits bits;
      if (spec && spec->bits) {
        bits = *spec->bits;
      } else {
        bits = {b_w, b_w, b_w, b_w, b_a, b_a, b_a};
      }
      const int in_bits = b_a;
      c.add(checked_mul(macs_linear(site.n_inputs, site.n_outputs), l), bits.W0, in_bits);
      c.add(checked_mul(checked_mul(r, site.n_inputs), l), bits.A, in_bits);
      c.add(checked_mul(r, l), bits.E, bits.hA);
      c.add(checked_mul(checked_mul(site.n_outputs, r), l), bits.B, bits.hE);
      c.add(checked_mul(site.n_outputs, l), 32, 32);
      break;
    }
    case SiteKind::Scores:
    case SiteKind::Context:
      c.add(checked_mul(checked_mul(l, l), mixing), b_w, b_a);
      break;
    case SiteKind::Scale:
      c.add(site.name == "pos_scale" ? 2 : 1, b_w, b_a);
      break;
    case SiteKind::PosProj:
      c.add(checked_mul(checked_mul(dims.d, dims.d), dims.e), b_w, b_a);
      break;
    case SiteKind::RelScores:
      c.add(checked_mul(checked_mul(l, dims.e), mixing), b_w, b_a);
      break;
  }
  return c;
}

void validate_spec(const SiteSpec& spec, const ModelDims& dims,
                   const std::vector<SiteTemplate>& sites, const std::string& method) {
  const std::string where = "method '" + method + "', site '" + spec.name + "'";
  const auto it = std::find_if(sites.begin(), sites.end(),
                               [&](const SiteTemplate& s) { return s.name == spec.name; });
  if (it == sites.end()) throw ConfigError(where + ": unknown site");
  if (spec.kind && *spec.kind != it->kind && !(is_projection(it->kind) && is_projection(*spec.kind))) {
    throw ConfigError(where + ": kind '" + std::string(to_string(*spec.kind)) +
                      "' not applicable");
  }
  require_bits(spec.b_w, where);
  require_bits(spec.b_a, where);
  if (spec.bits) {
    for (int b : {spec.bits->W0, spec.bits->A, spec.bits->B, spec.bits->E, spec.bits->hA,
                  spec.bits->hE, spec.bits->out}) {
      require_bits(b, where);
    }
  }
  if (spec.r < 0) throw ConfigError(where + ": negative rank");
  if (spec.layer < -1 || spec.layer >= dims.n_layers) {
    throw ConfigError(where + ": layer " + std::to_string(spec.layer) + " out of range");
  }
}

}  // namespace

std::vector<std::string> layer_site_names(AttentionKind kind) {
  ModelDims dims;
  std::vector<std::string> names;
  for (const auto& s : layer_template(dims, kind)) names.push_back(s.name);
  return names;
}

CountReport count_method(const ModelDims& dims, AttentionKind kind, const MethodConfig& method) {
  dims.validate();
  if (kind == AttentionKind::Disentangled && dims.e <= 0) {
    throw ConfigError("disentangled attention needs a positive positional size e");
  }
  const auto sites = layer_template(dims, kind);
  for (const SiteSpec& spec : method.sites) validate_spec(spec, dims, sites, method.name);

  CountReport report;
  report.name = method.name;
  for (const auto& s : sites) report.sites.push_back({s.name, s.kind, 0, 0, s.attention});

  for (Count layer = 0; layer < dims.n_layers; ++layer) {
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const SiteSpec* spec = nullptr;
      for (const SiteSpec& candidate : method.sites) {
        if (candidate.name != sites[i].name) continue;
        if (candidate.layer == layer) {
          spec = &candidate;
          break;
        }
        if (candidate.layer == -1 && spec == nullptr) spec = &candidate;
      }
      const SiteKind kind_used = spec && spec->kind ? *spec->kind : sites[i].kind;
      const Contribution c = count_site(dims, sites[i], kind_used, spec);
      SiteCount& out = report.sites[i];
      out.kind = kind_used;
      out.macs = checked_add(out.macs, c.macs);
      out.bops = checked_add(out.bops, c.bops);
      PerimeterTotals& enc = report.encoder;
      enc.macs = checked_add(enc.macs, c.macs);
      enc.bops = checked_add(enc.bops, c.bops);
      if (sites[i].attention) {
        report.attention.macs = checked_add(report.attention.macs, c.macs);
        report.attention.bops = checked_add(report.attention.bops, c.bops);
      }
    }
  }
  return report;
}

double relative_bops(const CountReport& a, const CountReport& b, Perimeter perimeter) {
  const Count denominator = b.totals(perimeter).bops;
  if (denominator <= 0) throw ConfigError("relative_bops: baseline has no operations");
  return 100.0 * static_cast<double>(a.totals(perimeter).bops) / static_cast<double>(denominator);
}

std::optional<MethodConfig> preset_method(std::string_view name) {
  if (name == "full_precision") return MethodConfig{std::string(name), {}};
  SiteKind kind;
  std::string_view digits;
  if (name.starts_with("lora_r")) {
    kind = SiteKind::Lora;
    digits = name.substr(6);
  } else if (name.starts_with("svd_lora_r")) {
    kind = SiteKind::SvdLora;
    digits = name.substr(10);
  } else {
    return std::nullopt;
  }
  Count r = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), r);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty()) {
    return std::nullopt;
  }
  MethodConfig method{std::string(name), {}};
  for (const char* site : {"Wq", "Wk", "Wv"}) {
    SiteSpec spec;
    spec.name = site;
    spec.kind = kind;
    spec.r = r;
    method.sites.push_back(spec);
  }
  return method;
}

std::string format_millions(Count value) {
  const Count hundredths = (value + 5000) / 10000;
  char buffer[48];
  std::snprintf(buffer, sizeof buffer, "%lld.%02lldM", static_cast<long long>(hundredths / 100),
                static_cast<long long>(hundredths % 100));
  return buffer;
}

}  // namespace blora::complexity
