#include "commands.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blora/audit.hpp"
#include "blora/errors.hpp"
#include "blora/report.hpp"
#include "blora/trainer.hpp"

namespace blora::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw ConfigError("'" + path.string() + "' already exists (use --force to overwrite)");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ConfigError("cannot write '" + path.string() + "'");
  file << text;
  if (!file) throw ConfigError("failed writing '" + path.string() + "'");
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

json summary_entry(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double std = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", std}, {"values", values}};
}

json aggregate(const std::vector<RunReport>& reports) {
  json metrics = json::object();
  const auto add = [&](const char* name, auto get) {
    std::vector<double> values;
    for (const RunReport& r : reports) {
      const std::optional<double> v = get(r.metrics);
      if (!v) return;
      values.push_back(*v);
    }
    metrics[name] = summary_entry(values);
  };
  add("accuracy", [](const RunMetrics& m) { return m.accuracy; });
  add("mse", [](const RunMetrics& m) { return m.mse; });
  add("final_loss", [](const RunMetrics& m) { return std::optional<double>(m.final_loss); });
  add("mean_effective_rank",
      [](const RunMetrics& m) { return std::optional<double>(m.mean_effective_rank); });
  add("mean_expected_bits",
      [](const RunMetrics& m) { return std::optional<double>(m.mean_expected_bits); });
  add("mean_decided_bits",
      [](const RunMetrics& m) { return std::optional<double>(m.mean_decided_bits); });
  std::vector<std::uint64_t> seeds;
  for (const RunReport& r : reports) seeds.push_back(r.seed);
  return {{"schema", kSchemaVersion}, {"seeds", seeds}, {"metrics", metrics}};
}

template <class Fn>
int guarded(std::ostream& err, Fn body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError("malformed seed list '" + text + "'");
    }
    seeds.push_back(value);
  }
  if (seeds.empty() || text.back() == ',') throw ConfigError("malformed seed list '" + text + "'");
  return seeds;
}

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = load_run_config(options.config_path);
    if (options.seeds) config.seeds = *options.seeds;
    config.validate();
    fs::path dir = config.output_dir;
    if (options.out_dir) {
      dir = *options.out_dir;
    } else if (const char* env = std::getenv(kOutDirEnv); env && *env) {
      dir = env;
    }
    std::vector<fs::path> targets;
    for (std::uint64_t seed : config.seeds) {
      targets.push_back(dir / ("run_seed" + std::to_string(seed) + ".json"));
      targets.push_back(dir / ("run_seed" + std::to_string(seed) + ".csv"));
    }
    if (config.seeds.size() > 1) targets.push_back(dir / "summary.json");
    for (const auto& t : targets) ensure_writable(t, options.force);

    std::vector<RunReport> reports;
    for (std::uint64_t seed : config.seeds) {
      RunReport report = run_experiment(config, seed);
      const fs::path stem = dir / ("run_seed" + std::to_string(seed));
      write_text(stem.string() + ".json", dump(to_json(report)));
      std::ostringstream csv;
      write_epoch_csv(report, csv);
      write_text(stem.string() + ".csv", csv.str());
      out << "seed " << seed << ": ";
      if (report.metrics.accuracy) out << "accuracy " << *report.metrics.accuracy << ", ";
      if (report.metrics.mse) out << "mse " << *report.metrics.mse << ", ";
      out << "final loss " << report.metrics.final_loss << ", mean effective rank "
          << report.metrics.mean_effective_rank << ", mean expected bits "
          << report.metrics.mean_expected_bits << " -> " << stem.string() << ".json\n";
      reports.push_back(std::move(report));
    }
    if (reports.size() > 1) {
      const json summary = aggregate(reports);
      write_text(dir / "summary.json", dump(summary));
      for (const auto& [name, entry] : summary["metrics"].items()) {
        out << name << ": " << entry["mean"].get<double>() << " +/- " << entry["std"].get<double>()
            << "\n";
      }
    }
    return kExitOk;
  });
}

int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const json doc = read_json_file(options.path);
    const bool is_report = doc.is_object() && doc.contains("per_block");
    const audit::AuditConfig config = is_report
                                          ? audit::audit_config_from_report(run_report_from_json(doc))
                                          : audit::audit_config_from_json(doc);
    if (options.out_path) ensure_writable(*options.out_path, options.force);
    const audit::AuditResult result = audit::run_audit(config, options.baseline);
    const json report = audit::to_json(result);
    if (options.json) {
      out << dump(report);
    } else {
      audit::print_audit(result, out);
    }
    if (options.out_path) write_text(*options.out_path, dump(report));
    return kExitOk;
  });
}

int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunReport report = load_run_report(options.path);
    std::ostringstream text;
    if (options.format == ReportFormat::Csv) {
      write_block_tables_csv(report, text);
    } else {
      text << dump(block_tables_json(report));
    }
    if (options.out_path) {
      ensure_writable(*options.out_path, options.force);
      write_text(*options.out_path, text.str());
    } else {
      out << text.str();
    }
    return kExitOk;
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian-LoRA toolkit: training, complexity audits and run reports", "blora"};
  app.require_subcommand(1);

  TrainOptions train;
  std::string seed_text;
  auto* train_cmd = app.add_subcommand("train", "Train on a synthetic task and write run reports");
  train_cmd->add_option("config", train.config_path, "Run config JSON")->required();
  train_cmd->add_option("--seed", seed_text, "Comma-separated seeds, e.g. 0,1,2");
  train_cmd->add_option("--out", train.out_dir, "Output directory (default: $BLORA_OUT_DIR or the config's)");
  train_cmd->add_flag("--force", train.force, "Overwrite existing outputs");

  AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("audit", "Count MACs/BOPs/params for an audit config or run report");
  audit_cmd->add_option("path", audit.path, "Audit config or run report JSON")->required();
  audit_cmd->add_option("--baseline", audit.baseline, "Baseline method or preset (100%)");
  audit_cmd->add_option("--out", audit.out_path, "Write the CountReport JSON here");
  audit_cmd->add_flag("--json", audit.json, "Print the CountReport JSON");
  audit_cmd->add_flag("--force", audit.force, "Overwrite an existing --out file");

  ReportOptions report;
  std::string format = "csv";
  auto* report_cmd = app.add_subcommand("report", "Tabulate ranks and decided bitwidths of a run report");
  report_cmd->add_option("path", report.path, "Run report JSON")->required();
  report_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  report_cmd->add_option("--out", report.out_path, "Write the table here instead of stdout");
  report_cmd->add_flag("--force", report.force, "Overwrite an existing --out file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitConfig;
  }

  if (train_cmd->parsed()) {
    if (!seed_text.empty()) {
      try {
        train.seeds = parse_seed_list(seed_text);
      } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
      }
    }
    return cmd_train(train, out, err);
  }
  if (audit_cmd->parsed()) return cmd_audit(audit, out, err);
  report.format = format == "json" ? ReportFormat::Json : ReportFormat::Csv;
  return cmd_report(report, out, err);
}

}  // namespace blora::cli
