#include "ffis/table.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffis/common.hpp"

namespace ffis {

void ResultTable::validate() const {
  if (name.empty()) throw ValidationError("result table: empty name");
  if (columns.empty()) throw ValidationError("result table: no columns");
  const auto check_cell = [this](const std::string& cell) {
    for (char c : cell) {
      if (c == ',' || c == '"' || c == '\n' || c == '\r') {
        throw ValidationError("result table " + name + ": cell contains a CSV delimiter: " + cell);
      }
    }
  };
  check_cell(name);
  for (const std::string& c : columns) check_cell(c);
  for (const auto& row : rows) {
    if (row.size() != columns.size()) {
      throw ValidationError("result table " + name + ": ragged row");
    }
    for (const std::string& cell : row) check_cell(cell);
  }
}

std::string real_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string int_cell(long long v) { return std::to_string(v); }

EmitFormat parse_emit_format(const std::string& name) {
  if (name == "csv") return EmitFormat::csv;
  if (name == "json") return EmitFormat::json;
  throw ValidationError("unknown output format: " + name + " (expected csv or json)");
}

std::string emit_format_name(EmitFormat f) { return f == EmitFormat::csv ? "csv" : "json"; }
std::string format_extension(EmitFormat f) { return emit_format_name(f); }

namespace {

std::string render_csv(const std::vector<ResultTable>& tables) {
  std::ostringstream out;
  bool first = true;
  for (const ResultTable& t : tables) {
    if (!first) out << "\n";
    first = false;
    out << "# table " << t.name << "\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      if (i) out << ',';
      out << t.columns[i];
    }
    out << "\n";
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        out << row[i];
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string render_json(const std::vector<ResultTable>& tables) {
  nlohmann::ordered_json doc;
  doc["tables"] = nlohmann::ordered_json::array();
  for (const ResultTable& t : tables) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["columns"] = t.columns;
    jt["rows"] = t.rows;
    doc["tables"].push_back(std::move(jt));
  }
  return doc.dump(2) + "\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::vector<ResultTable> parse_csv(const std::string& text) {
  std::vector<ResultTable> tables;
  std::istringstream in(text);
  std::string line;
  ResultTable* current = nullptr;
  bool want_header = false;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# table ", 0) == 0) {
      tables.emplace_back();
      current = &tables.back();
      current->name = line.substr(8);
      want_header = true;
      continue;
    }
    if (current == nullptr) {
      throw ValidationError("csv line " + std::to_string(lineno) + ": content before any table header");
    }
    if (want_header) {
      current->columns = split_csv_line(line);
      want_header = false;
    } else {
      current->rows.push_back(split_csv_line(line));
    }
  }
  for (const ResultTable& t : tables) t.validate();
  return tables;
}

std::vector<ResultTable> parse_json(const std::string& text) {
  std::vector<ResultTable> tables;
  try {
    const nlohmann::json doc = nlohmann::json::parse(text);
    for (const auto& jt : doc.at("tables")) {
      ResultTable t;
      t.name = jt.at("name").get<std::string>();
      t.columns = jt.at("columns").get<std::vector<std::string>>();
      t.rows = jt.at("rows").get<std::vector<std::vector<std::string>>>();
      tables.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("result json: ") + e.what());
  }
  for (const ResultTable& t : tables) t.validate();
  return tables;
}

}  // namespace

std::string render_results(const std::vector<ResultTable>& tables, EmitFormat f) {
  for (const ResultTable& t : tables) t.validate();
  return f == EmitFormat::csv ? render_csv(tables) : render_json(tables);
}

void emit_results(const std::vector<ResultTable>& tables, EmitFormat f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << render_results(tables, f);
  if (!out) throw ValidationError("write failed: " + path);
}

std::vector<ResultTable> parse_results(const std::string& text, EmitFormat f) {
  return f == EmitFormat::csv ? parse_csv(text) : parse_json(text);
}

std::vector<ResultTable> read_results_file(const std::string& path, EmitFormat f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_results(buf.str(), f);
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_manifest(const std::string& artifact_path, const RunManifest& manifest) {
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(manifest.config_hash));
  nlohmann::ordered_json doc;
  doc["config_hash"] = hash;
  doc["seed"] = manifest.seed;
  doc["version"] = manifest.version;
  const std::string path = artifact_path + ".manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace ffis
