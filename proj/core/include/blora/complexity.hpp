#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Exact operation and parameter counts for attention encoders with low-rank
// adapters. All counts are 64-bit integers; overflow throws.
namespace blora::complexity {

using Count = std::int64_t;

struct ModelDims {
  Count d = 768;        // hidden size
  Count l_seq = 256;    // sequence length
  Count h = 12;         // attention heads
  Count e = 0;          // positional embedding size (disentangled attention)
  Count d_i = 3072;     // feed-forward intermediate size
  Count n_layers = 12;  // encoder layers
  Count r = 8;          // default adapter rank

  // Throws ConfigError unless all sizes are positive (e may be 0) and h | d.
  void validate() const;
  Count head_dim() const { return d / h; }
};

Count checked_mul(Count a, Count b);
Count checked_add(Count a, Count b);

Count macs_linear(Count n_inputs, Count n_outputs);
// 3 d^2 l + 2 l^2 (d/h) h + 1
Count macs_self_attention(const ModelDims& dims);
// Self-attention plus positional projections and both relative score terms:
// 3 d^2 l + 2 l^2 (d/h) h + 2 d^2 e + 2 l e (d/h) h + 3
Count macs_disentangled_attention(const ModelDims& dims);
// Linear MACs plus (2r + 1) d_out for the A product, B product and scaling.
Count macs_lora(Count n_inputs, Count n_outputs, Count d_out, Count r);
// n_i n_o + r n_i + r n_o + n_o; equals macs_lora for square layers.
Count macs_lora_rect(Count n_inputs, Count n_outputs, Count r);
Count flops(Count macs);
Count bops(Count macs, int b_w, int b_a);

// Adapters on all six encoder matrices: 2 l r (5 d + d_i).
Count params_lora(Count d, Count d_i, Count n_layers, Count r);
// Adapters on W_q, W_k, W_v only: 6 l r d.
Count params_blora(Count d, Count n_layers, Count r);

enum class AttentionKind { Self, Disentangled };
enum class Perimeter { Attention, Encoder };

std::string_view to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(std::string_view text);
std::string_view to_string(Perimeter perimeter);

enum class SiteKind {
  Linear,     // frozen projection, weight x activation
  Lora,       // projection with a B A adapter
  SvdLora,    // projection with a B diag(E) A adapter
  Scores,     // q k^T, activation x activation
  Context,    // probs v, activation x activation
  Scale,      // scalar score scaling
  PosProj,    // positional key/query projections
  RelScores,  // content-to-position / position-to-content scores
};

std::string_view to_string(SiteKind kind);
SiteKind site_kind_from_string(std::string_view text);
bool is_projection(SiteKind kind);

// Bitwidths of the seven quantized tensors of an adapted projection.
struct AdapterBits {
  int W0 = 32, A = 32, B = 32, E = 32, hA = 32, hE = 32, out = 32;
};

struct SiteSpec {
  std::string name;
  std::optional<SiteKind> kind;  // only projections may change kind
  int b_w = 32;                  // weight bits, or first operand for act x act sites
  int b_a = 32;                  // input activation bits, or second operand
  Count r = 0;
  std::optional<AdapterBits> bits;  // per-tensor bits for SvdLora sites
  int layer = -1;                   // -1 applies to every layer
};

struct MethodConfig {
  std::string name;
  std::vector<SiteSpec> sites;  // overrides on top of the full-precision layer
};

struct SiteCount {
  std::string name;
  SiteKind kind = SiteKind::Linear;
  Count macs = 0;
  Count bops = 0;
  bool attention = true;  // inside the attention perimeter
};

struct PerimeterTotals {
  Count macs = 0;
  Count bops = 0;
};

struct CountReport {
  std::string name;
  std::vector<SiteCount> sites;  // summed over layers, in layer order of first appearance
  PerimeterTotals attention;
  PerimeterTotals encoder;

  const PerimeterTotals& totals(Perimeter perimeter) const {
    return perimeter == Perimeter::Attention ? attention : encoder;
  }
};

// Standard site names of one encoder layer for the given attention kind.
std::vector<std::string> layer_site_names(AttentionKind kind);

CountReport count_method(const ModelDims& dims, AttentionKind kind, const MethodConfig& method);

// 100 * bops(a) / bops(b) over the chosen perimeter.
double relative_bops(const CountReport& a, const CountReport& b, Perimeter perimeter);

// Full-precision adapters of rank r on W_q, W_k, W_v ("lora_r<r>", "svd_lora_r<r>"), or
// no adapters at all ("full_precision").
std::optional<MethodConfig> preset_method(std::string_view name);

// "1.33M"-style rendering rounded half away from zero to two decimals.
std::string format_millions(Count value);

}  // namespace blora::complexity
