#pragma once

#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "errors.hpp"
#include "json.hpp"

namespace boltzctl {

// File system failure; the message carries the OS error text.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Cell = std::variant<double, long long, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  Table() = default;
  explicit Table(std::vector<std::string> cols) : columns(std::move(cols)) {}
  void add(std::vector<Cell> row) {
    if (row.size() != columns.size())
      throw ValidationError(fmt::format("row has {} cells, table has {} columns", row.size(), columns.size()));
    rows.push_back(std::move(row));
  }
};

// 17 significant digits: parse(format(x)) == x bitwise.
inline std::string format_double(double x) { return fmt::format("{:.17g}", x); }

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Header row plus one line per row. Non-finite values are rejected with
// their location before anything is produced.
inline std::string render_csv(const Table& t) {
  std::string out;
  for (size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + csv_quote(t.columns[c]);
  out += "\n";
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.columns.size()) throw ValidationError(fmt::format("row {} has {} cells", r + 1, row.size()));
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) out += ",";
      if (const double* d = std::get_if<double>(&row[c])) {
        if (!std::isfinite(*d))
          throw ValidationError(fmt::format("non-finite value {} at row {} column '{}'", *d, r + 1, t.columns[c]));
        out += format_double(*d);
      } else if (const long long* i = std::get_if<long long>(&row[c])) {
        out += fmt::format("{}", *i);
      } else {
        out += csv_quote(std::get<std::string>(row[c]));
      }
    }
    out += "\n";
  }
  return out;
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(cell));
      cell.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      cell += c;
      any = true;
    }
  }
  if (quoted) throw ValidationError("unterminated quoted field");
  if (any) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError(fmt::format("{}: {}", p.string(), std::strerror(errno)));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("{}: {}", p.string(), std::strerror(errno)));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.close();
  if (!f) throw IoError(fmt::format("{}: {}", p.string(), std::strerror(errno)));
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  std::string out;
  for (unsigned int i = 0; i < n; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

inline void emit_csv(const Table& t, const std::filesystem::path& p) { write_file(p, render_csv(t)); }

// Flat JSON object: scalar values only. Output files are listed as
// "file.<name>" -> sha256 of the bytes written.
struct RunManifest {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();

  void set(const std::string& key, const nlohmann::ordered_json& v) {
    if (v.is_structured()) throw ValidationError("manifest value for '" + key + "' is not a scalar");
    j[key] = v;
  }
};

inline void emit_manifest(const RunManifest& m, const std::filesystem::path& p) { write_file(p, m.j.dump(2) + "\n"); }

// Render every table first so a bad value leaves no partial output, then
// write the tables, hash them into the manifest and write the manifest.
inline void write_outputs(const std::filesystem::path& dir, const std::vector<std::pair<std::string, Table>>& tables,
                          RunManifest& m, const std::string& manifest_name = "manifest.json") {
  std::vector<std::string> text;
  for (const auto& [name, t] : tables) {
    try {
      text.push_back(render_csv(t));
    } catch (const ValidationError& e) {
      throw ValidationError(name + ": " + e.what());
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("{}: {}", dir.string(), ec.message()));
  for (size_t i = 0; i < tables.size(); ++i) {
    write_file(dir / tables[i].first, text[i]);
    m.set("file." + tables[i].first, sha256_hex(text[i]));
  }
  emit_manifest(m, dir / manifest_name);
}

}  // namespace boltzctl
