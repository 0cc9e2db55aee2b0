#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace blora::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Default output directory when --out is absent and the config names none.
inline constexpr const char* kOutDirEnv = "BLORA_OUT_DIR";

struct TrainOptions {
  std::string config_path;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> out_dir;
  bool force = false;
};

struct AuditOptions {
  std::string path;  // audit config or run report
  std::optional<std::string> baseline;
  std::optional<std::string> out_path;
  bool json = false;  // print the CountReport JSON instead of the summary
  bool force = false;
};

enum class ReportFormat { Csv, Json };

struct ReportOptions {
  std::string path;
  ReportFormat format = ReportFormat::Csv;
  std::optional<std::string> out_path;
  bool force = false;
};

// Each command returns an exit code; errors are written to `err`.
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err);

// Parses "0,1,2"; throws ConfigError on malformed lists.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

// Full command line, argv[0] included.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace blora::cli
