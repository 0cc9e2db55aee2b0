#pragma once

#include <iosfwd>
#include <string>

#include "blora/complexity.hpp"
#include "blora/trainer.hpp"
#include <nlohmann/json.hpp>

// JSON and CSV forms of run configurations and run reports. Every document
// carries a top-level "schema": 1. Parsing is strict: unknown keys, wrong
// types and out-of-range values throw ConfigError naming the offending key.
namespace blora {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const QuantizerRecord& record);
QuantizerRecord quantizer_record_from_json(const nlohmann::json& doc, const std::string& where);

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& doc);
RunReport load_run_report(const std::string& path);

// One row per epoch: epoch,loss,mean_effective_rank,mean_expected_bits.
void write_epoch_csv(const RunReport& report, std::ostream& out);

// Per-block table (layer, site, ranks, decided bits per quantizer site)
// followed by a blank line and the median decided bits per quantizer site.
void write_block_tables_csv(const RunReport& report, std::ostream& out);
nlohmann::json block_tables_json(const RunReport& report);

// Median of the decided bitwidths of one quantizer site across all blocks.
double median_decided_bits(const RunReport& report, QuantSite site);

nlohmann::json read_json_file(const std::string& path);

}  // namespace blora
