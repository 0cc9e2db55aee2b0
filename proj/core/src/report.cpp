#include "blora/report.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "blora/errors.hpp"
#include "json_reader.hpp"

namespace blora {

using nlohmann::json;
using detail::ObjectReader;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(ObjectReader& r, const std::string& key) {
  if (!r.has(key)) return std::nullopt;
  if (r.raw(key).is_null()) return std::nullopt;
  return r.number(key);
}

int bits_value(const json& v, const std::string& where) {
  if (!v.is_number_integer() || !is_supported_bitwidth(v.get<int>())) {
    throw ConfigError("key '" + where + "' must be one of 2, 4, 8, 16, 32");
  }
  return v.get<int>();
}

}  // namespace

json to_json(const RunConfig& c) {
  json doc;
  doc["schema"] = kSchemaVersion;
  doc["train"] = {{"lambda_q", c.train.lambda_q},
                  {"lambda_r", c.train.lambda_r},
                  {"lr", c.train.lr},
                  {"gate_lr", c.train.gate_lr ? json(*c.train.gate_lr) : json(nullptr)},
                  {"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"adam_beta1", c.train.adam.beta1},
                  {"adam_beta2", c.train.adam.beta2},
                  {"adam_eps", c.train.adam.eps},
                  {"weight_decay", c.train.adam.weight_decay},
                  {"warmup_ratio", c.train.warmup_ratio}};
  doc["quantizer"] = {{"zeta1", c.quantizer.zeta1},
                      {"zeta2", c.quantizer.zeta2},
                      {"threshold", c.quantizer.threshold},
                      {"temperature", c.quantizer.temperature},
                      {"phi_init", c.adapter.phi_init},
                      {"enabled", c.adapter.quantize}};
  doc["adapter"] = {{"rank", c.adapter.rank},
                    {"lora_alpha", c.adapter.lora_alpha},
                    {"init_std", c.adapter.init_std},
                    {"xi_init", c.adapter.xi_init}};
  doc["model"] = {{"d_model", c.model.d_model}, {"heads", c.model.heads},
                  {"layers", c.model.layers},   {"d_ff", c.model.d_ff},
                  {"head_hidden", c.model.head_hidden}, {"seed", c.model.seed}};
  doc["task"] = {{"kind", std::string(to_string(c.task.kind))},
                 {"vocab", c.task.vocab},
                 {"seq_len", c.task.seq_len},
                 {"classes", c.task.classes},
                 {"train_size", c.task.train_size},
                 {"eval_size", c.task.eval_size},
                 {"seed", c.task.seed},
                 {"features", c.task.features},
                 {"teacher_rank", c.task.teacher_rank},
                 {"teacher_scale", c.task.teacher_scale},
                 {"noise", c.task.noise}};
  doc["compat"] = {{"verbatim_alg2", c.quantizer.verbatim_alg2},
                   {"temperature_per_bitwidth", c.quantizer.temperature_per_bitwidth}};
  doc["seeds"] = c.seeds;
  doc["output_dir"] = c.output_dir;
  return doc;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  ObjectReader top(doc, "");
  detail::check_schema(top, false);
  if (top.has("train")) {
    auto r = top.object("train");
    r.number("lambda_q", c.train.lambda_q);
    r.number("lambda_r", c.train.lambda_r);
    r.number("lr", c.train.lr);
    if (r.has("gate_lr") && !r.raw("gate_lr").is_null()) c.train.gate_lr = r.number("gate_lr");
    r.count("batch_size", c.train.batch_size);
    r.count("epochs", c.train.epochs);
    r.number("adam_beta1", c.train.adam.beta1);
    r.number("adam_beta2", c.train.adam.beta2);
    r.number("adam_eps", c.train.adam.eps);
    r.number("weight_decay", c.train.adam.weight_decay);
    r.number("warmup_ratio", c.train.warmup_ratio);
    r.finish();
  }
  if (top.has("quantizer")) {
    auto r = top.object("quantizer");
    r.number("zeta1", c.quantizer.zeta1);
    r.number("zeta2", c.quantizer.zeta2);
    r.number("threshold", c.quantizer.threshold);
    r.number("temperature", c.quantizer.temperature);
    r.number("phi_init", c.adapter.phi_init);
    r.boolean("enabled", c.adapter.quantize);
    r.finish();
  }
  if (top.has("adapter")) {
    auto r = top.object("adapter");
    r.count("rank", c.adapter.rank);
    r.number("lora_alpha", c.adapter.lora_alpha);
    r.number("init_std", c.adapter.init_std);
    r.number("xi_init", c.adapter.xi_init);
    r.finish();
  }
  if (top.has("model")) {
    auto r = top.object("model");
    r.count("d_model", c.model.d_model);
    r.count("heads", c.model.heads);
    r.count("layers", c.model.layers);
    r.count("d_ff", c.model.d_ff);
    r.count("head_hidden", c.model.head_hidden);
    r.seed("seed", c.model.seed);
    r.finish();
  }
  if (top.has("task")) {
    auto r = top.object("task");
    if (r.has("kind")) {
      const std::string kind = r.string("kind");
      try {
        c.task.kind = task_kind_from_string(kind);
      } catch (const std::exception&) {
        throw ConfigError("key '" + r.where("kind") + "': unknown task kind '" + kind + "'");
      }
    }
    r.count("vocab", c.task.vocab);
    r.count("seq_len", c.task.seq_len);
    r.count("classes", c.task.classes);
    r.count("train_size", c.task.train_size);
    r.count("eval_size", c.task.eval_size);
    r.seed("seed", c.task.seed);
    r.count("features", c.task.features);
    r.count("teacher_rank", c.task.teacher_rank);
    r.number("teacher_scale", c.task.teacher_scale);
    r.number("noise", c.task.noise);
    r.finish();
  }
  if (top.has("compat")) {
    auto r = top.object("compat");
    r.boolean("verbatim_alg2", c.quantizer.verbatim_alg2);
    r.boolean("temperature_per_bitwidth", c.quantizer.temperature_per_bitwidth);
    r.finish();
  }
  if (top.has("seeds")) {
    c.seeds.clear();
    for (const auto& s : top.array("seeds")) {
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0) {
        throw ConfigError("key 'seeds' must hold non-negative integers");
      }
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  top.string("output_dir", c.output_dir);
  top.finish();
  c.validate();
  return c;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(read_json_file(path));
}

json to_json(const QuantizerRecord& q) {
  return {{"phi", q.phi},
          {"alpha", q.alpha},
          {"beta", q.beta},
          {"range_mode", std::string(to_string(q.range_mode))},
          {"enabled", q.enabled},
          {"decided_bits", q.decided_bits},
          {"expected_bits", q.expected_bits}};
}

QuantizerRecord quantizer_record_from_json(const json& doc, const std::string& where) {
  QuantizerRecord q;
  ObjectReader r(doc, where);
  const auto& phi = r.array("phi");
  if (phi.size() != 4) throw ConfigError("key '" + r.where("phi") + "' must hold 4 numbers");
  for (std::size_t i = 0; i < 4; ++i) q.phi[i] = detail::element_number(phi[i], r.where("phi"));
  q.alpha = r.number("alpha");
  q.beta = r.number("beta");
  const std::string mode = r.string("range_mode");
  try {
    q.range_mode = range_mode_from_string(mode);
  } catch (const std::exception&) {
    throw ConfigError("key '" + r.where("range_mode") + "': unknown range mode '" + mode + "'");
  }
  q.enabled = r.boolean("enabled");
  q.decided_bits = bits_value(r.raw("decided_bits"), r.where("decided_bits"));
  q.expected_bits = r.number("expected_bits");
  r.finish();
  return q;
}

json to_json(const RunReport& report) {
  json doc;
  doc["schema"] = kSchemaVersion;
  doc["seed"] = report.seed;
  doc["config"] = to_json(report.config);
  doc["loss_curve"] = report.loss_curve;
  json epochs = json::array();
  for (const EpochSnapshot& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"mean_effective_rank", e.mean_effective_rank},
                      {"mean_expected_bits", e.mean_expected_bits}});
  }
  doc["epochs"] = epochs;
  json blocks = json::array();
  for (const BlockRecord& b : report.blocks) {
    json decided = json::object();
    json quantizers = json::object();
    for (QuantSite s : kQuantSites) {
      const auto& q = b.quantizers[static_cast<std::size_t>(s)];
      decided[std::string(to_string(s))] = q.decided_bits;
      quantizers[std::string(to_string(s))] = to_json(q);
    }
    blocks.push_back({{"layer", b.layer},
                      {"site", b.site},
                      {"rank", b.rank},
                      {"effective_rank", b.effective_rank},
                      {"rank_logits", b.rank_logits},
                      {"decided_bits", decided},
                      {"quantizers", quantizers}});
  }
  doc["per_block"] = blocks;
  const RunMetrics& m = report.metrics;
  doc["metrics"] = {{"accuracy", optional_number(m.accuracy)},
                    {"mse", optional_number(m.mse)},
                    {"initial_loss", m.initial_loss},
                    {"final_loss", m.final_loss},
                    {"mean_effective_rank", m.mean_effective_rank},
                    {"mean_expected_bits", m.mean_expected_bits},
                    {"mean_decided_bits", m.mean_decided_bits},
                    {"frozen_hash_before", m.frozen_hash_before},
                    {"frozen_hash_after", m.frozen_hash_after}};
  doc["wall_time_s"] = report.wall_time_s;
  return doc;
}

RunReport run_report_from_json(const json& doc) {
  RunReport report;
  ObjectReader top(doc, "");
  detail::check_schema(top, true);
  report.config = run_config_from_json(top.raw("config"));
  top.seed("seed", report.seed);
  for (const auto& v : top.array("loss_curve")) {
    report.loss_curve.push_back(detail::element_number(v, "loss_curve"));
  }
  const auto& epochs = top.array("epochs");
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    ObjectReader r(epochs[i], "epochs[" + std::to_string(i) + "]");
    EpochSnapshot e;
    r.count("epoch", e.epoch);
    e.loss = r.number("loss");
    e.mean_effective_rank = r.number("mean_effective_rank");
    e.mean_expected_bits = r.number("mean_expected_bits");
    r.finish();
    report.epochs.push_back(e);
  }
  const auto& blocks = top.array("per_block");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    ObjectReader r(blocks[i], "per_block[" + std::to_string(i) + "]");
    BlockRecord b;
    r.count("layer", b.layer);
    b.site = r.string("site");
    r.count("rank", b.rank);
    r.count("effective_rank", b.effective_rank);
    if (b.effective_rank < 1 || b.effective_rank > b.rank) {
      throw ConfigError("key '" + r.where("effective_rank") + "' must lie in [1, rank]");
    }
    for (const auto& v : r.array("rank_logits")) {
      b.rank_logits.push_back(detail::element_number(v, r.where("rank_logits")));
    }
    auto decided = r.object("decided_bits");
    auto quantizers = r.object("quantizers");
    for (QuantSite s : kQuantSites) {
      const std::string name(to_string(s));
      auto& q = b.quantizers[static_cast<std::size_t>(s)];
      q = quantizer_record_from_json(quantizers.raw(name), quantizers.where(name));
      const int bits = bits_value(decided.raw(name), decided.where(name));
      if (bits != q.decided_bits) {
        throw ConfigError("key '" + decided.where(name) + "' disagrees with its quantizer record");
      }
    }
    decided.finish();
    quantizers.finish();
    r.finish();
    report.blocks.push_back(std::move(b));
  }
  auto m = top.object("metrics");
  report.metrics.accuracy = read_optional(m, "accuracy");
  report.metrics.mse = read_optional(m, "mse");
  report.metrics.initial_loss = m.number("initial_loss");
  report.metrics.final_loss = m.number("final_loss");
  report.metrics.mean_effective_rank = m.number("mean_effective_rank");
  report.metrics.mean_expected_bits = m.number("mean_expected_bits");
  report.metrics.mean_decided_bits = m.number("mean_decided_bits");
  report.metrics.frozen_hash_before = m.string("frozen_hash_before");
  report.metrics.frozen_hash_after = m.string("frozen_hash_after");
  m.finish();
  report.wall_time_s = top.number("wall_time_s");
  top.finish();
  return report;
}

RunReport load_run_report(const std::string& path) {
  return run_report_from_json(read_json_file(path));
}

void write_epoch_csv(const RunReport& report, std::ostream& out) {
  std::ostringstream text;
  text.precision(17);
  text << "epoch,loss,mean_effective_rank,mean_expected_bits\n";
  for (const EpochSnapshot& e : report.epochs) {
    text << e.epoch << ',' << e.loss << ',' << e.mean_effective_rank << ','
         << e.mean_expected_bits << '\n';
  }
  out << text.str();
}

double median_decided_bits(const RunReport& report, QuantSite site) {
  std::vector<double> values;
  for (const BlockRecord& b : report.blocks) {
    values.push_back(b.quantizers[static_cast<std::size_t>(site)].decided_bits);
  }
  if (values.empty()) throw ConfigError("report has no blocks");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_block_tables_csv(const RunReport& report, std::ostream& out) {
  std::ostringstream text;
  text << "layer,site,rank,effective_rank";
  for (QuantSite s : kQuantSites) text << ",bits_" << to_string(s);
  text << '\n';
  for (const BlockRecord& b : report.blocks) {
    text << b.layer << ',' << b.site << ',' << b.rank << ',' << b.effective_rank;
    for (const auto& q : b.quantizers) text << ',' << q.decided_bits;
    text << '\n';
  }
  text << "\nquantizer_site,median_decided_bits\n";
  for (QuantSite s : kQuantSites) {
    text << to_string(s) << ',' << median_decided_bits(report, s) << '\n';
  }
  out << text.str();
}

json block_tables_json(const RunReport& report) {
  json ranks = json::array();
  for (const BlockRecord& b : report.blocks) {
    json bits = json::object();
    for (QuantSite s : kQuantSites) {
      bits[std::string(to_string(s))] = b.quantizers[static_cast<std::size_t>(s)].decided_bits;
    }
    ranks.push_back({{"layer", b.layer},
                     {"site", b.site},
                     {"rank", b.rank},
                     {"effective_rank", b.effective_rank},
                     {"decided_bits", bits}});
  }
  json medians = json::object();
  for (QuantSite s : kQuantSites) medians[std::string(to_string(s))] = median_decided_bits(report, s);
  return {{"schema", kSchemaVersion}, {"blocks", ranks}, {"median_decided_bits", medians}};
}

}  // namespace blora
