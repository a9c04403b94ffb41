#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ffis {

inline constexpr const char* kVersion = "ffis 0.1.0";

// Flat result table with pre-rendered cells. Reals are rendered once, with
// enough digits to round-trip, so emitted files are byte-stable.
struct ResultTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void validate() const;  // consistent row widths, emission-safe cells
};

std::string real_cell(double v);  // %.17g
std::string int_cell(long long v);

enum class EmitFormat { csv, json };
EmitFormat parse_emit_format(const std::string& name);
std::string emit_format_name(EmitFormat f);
std::string format_extension(EmitFormat f);  // "csv" / "json"

// Multi-table document. CSV places each table under a `# table <name>` line;
// JSON nests them under a "tables" array. Both round-trip cell-exactly.
std::string render_results(const std::vector<ResultTable>& tables, EmitFormat f);
void emit_results(const std::vector<ResultTable>& tables, EmitFormat f, const std::string& path);
std::vector<ResultTable> parse_results(const std::string& text, EmitFormat f);
std::vector<ResultTable> read_results_file(const std::string& path, EmitFormat f);

std::uint64_t fnv1a64(const std::string& text);

// Run provenance written next to every emitted artifact as
// <path>.manifest.json. The hash covers the exact config text.
struct RunManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string version = kVersion;
};

void write_manifest(const std::string& artifact_path, const RunManifest& manifest);

}  // namespace ffis
