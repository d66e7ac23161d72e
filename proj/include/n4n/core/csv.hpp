#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"

namespace n4n {

/// Header-row CSV with comma separators and optional double-quoted fields.
/// Lines starting with '#' are comments.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  static CsvTable parse(std::string_view text) {
    CsvTable t;
    bool have_header = false;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') {
        if (eol == text.size()) break;
        continue;
      }
      auto fields = split_line(line, line_no);
      if (!have_header) {
        t.header_ = std::move(fields);
        have_header = true;
      } else {
        if (fields.size() != t.header_.size())
          fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(t.header_.size()) + " fields, got " +
                                          std::to_string(fields.size()));
        t.rows_.push_back(std::move(fields));
      }
      if (eol == text.size()) break;
    }
    if (!have_header) fail(ErrorCode::ParseError, "csv has no header row");
    return t;
  }

  static CsvTable load(const std::filesystem::path& path) { return parse(read_file(path)); }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t i) const { return rows_.at(i); }

  bool has(std::string_view column) const { return find(column) != npos; }

  std::size_t column(std::string_view name) const {
    auto idx = find(name);
    if (idx == npos) fail(ErrorCode::ParseError, "missing column '" + std::string(name) + "'");
    return idx;
  }

  const std::string& at(std::size_t r, std::string_view col) const { return rows_.at(r).at(column(col)); }

  double number(std::size_t r, std::string_view col) const { return to_double(at(r, col)); }

  void add_row(std::vector<std::string> fields) {
    if (fields.size() != header_.size()) fail(ErrorCode::ShapeMismatch, "row width differs from header");
    rows_.push_back(std::move(fields));
  }

  std::string str() const {
    std::string out;
    append_line(out, header_);
    for (const auto& r : rows_) append_line(out, r);
    return out;
  }

  void save(const std::filesystem::path& path, std::string_view preamble = {}) const {
    write_file_atomic(path, std::string(preamble) + str());
  }

  static double to_double(std::string_view s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      fail(ErrorCode::ParseError, "not a number: '" + std::string(s) + "'");
    return v;
  }

  /// Shortest round-trip representation.
  static std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    return npos;
  }

  static std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur.push_back('"');
            ++i;
          } else {
            quoted = false;
          }
        } else {
          cur.push_back(c);
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (quoted) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(trim(cur));
    return out;
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  static void append_line(std::string& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(',');
      const auto& f = fields[i];
      if (f.find_first_of(",\"\n") != std::string::npos) {
        out.push_back('"');
        for (char c : f) {
          if (c == '"') out.push_back('"');
          out.push_back(c);
        }
        out.push_back('"');
      } else {
        out += f;
      }
    }
    out.push_back('\n');
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace n4n
