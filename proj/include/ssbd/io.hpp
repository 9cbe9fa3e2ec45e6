#pragma once

// Plain-text vector files (one "%.17g" value per line; blank lines and '#'
// comments ignored), CSV helpers, and the flat `key = value` config format.

#include <ssbd/core.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace ssbd::io {

inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string_view strip_comment(std::string_view s) {
  const auto h = s.find('#');
  return h == std::string_view::npos ? s : s.substr(0, h);
}

inline double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || tok.empty())
    throw ParseError("parse", where + ": not a number: '" + std::string(tok) + "'");
  return v;
}

inline Vector parse_vector(std::istream& in, const std::string& name) {
  std::vector<double> vals;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(strip_comment(line));
    if (t.empty()) continue;
    vals.push_back(parse_double(t, name + ":" + std::to_string(lineno)));
  }
  Vector v(static_cast<Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<Index>(i)] = vals[i];
  return v;
}

inline Vector read_vector(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_vector", "cannot open '" + path + "'");
  Vector v = parse_vector(in, path);
  if (v.size() == 0) throw ParseError("read_vector", "'" + path + "' contains no values");
  return v;
}

inline std::string format_vector(const Vector& v) {
  std::string s;
  s.reserve(static_cast<std::size_t>(v.size()) * 24);
  for (Index i = 0; i < v.size(); ++i) {
    s += fmt17(v[i]);
    s += '\n';
  }
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("write", "cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ParseError("write", "write to '" + path + "' failed");
}

inline void write_vector(const std::string& path, const Vector& v) { write_text(path, format_vector(v)); }

/// Points file: one point per line, entries separated by whitespace or commas.
inline std::vector<Vector> read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_points", "cannot open '" + path + "'");
  std::vector<Vector> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t(trim(strip_comment(line)));
    if (t.empty()) continue;
    for (char& c : t)
      if (c == ',') c = ' ';
    std::istringstream ss(t);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) vals.push_back(parse_double(tok, path + ":" + std::to_string(lineno)));
    Vector p(static_cast<Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) p[static_cast<Index>(i)] = vals[i];
    pts.push_back(std::move(p));
  }
  return pts;
}

/// Minimal CSV builder: fixed header, rows appended in order.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : ncols_(header.size()) { append_row(header); }

  Csv& row() {
    if (!cur_.empty()) flush();
    open_ = true;
    return *this;
  }
  Csv& operator<<(double x) { return cell(fmt17(x)); }
  Csv& operator<<(const std::string& s) { return cell(s); }
  Csv& operator<<(const char* s) { return cell(s); }
  template <class I>
    requires std::is_integral_v<I>
  Csv& operator<<(I v) { return cell(std::to_string(v)); }

  std::string str() {
    if (open_) flush();
    return text_;
  }
  std::size_t columns() const noexcept { return ncols_; }

 private:
  Csv& cell(std::string s) {
    cur_.push_back(std::move(s));
    return *this;
  }
  void flush() {
    if (cur_.size() != ncols_)
      throw ContractError("Csv", "row has " + std::to_string(cur_.size()) + " cells, header has " + std::to_string(ncols_));
    append_row(cur_);
    cur_.clear();
    open_ = false;
  }
  void append_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::size_t ncols_;
  std::vector<std::string> cur_;
  std::string text_;
  bool open_ = false;
};

/// Flat `key = value` config (INI subset). Section headers `[...]` are ignored.
using Config = std::map<std::string, std::string>;

inline Config parse_config(std::istream& in, const std::string& name) {
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(strip_comment(line));
    if (t.empty() || t.front() == ';' || t.front() == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("config", name + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(t.substr(0, eq));
    auto val = trim(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    if (key.empty()) throw ParseError("config", name + ":" + std::to_string(lineno) + ": empty key");
    cfg[std::string(key)] = std::string(val);
  }
  return cfg;
}

inline Config read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_config", "cannot open '" + path + "'");
  return parse_config(in, path);
}

inline std::string format_config(const Config& cfg) {
  std::string s;
  for (const auto& [k, v] : cfg) s += k + " = " + v + "\n";
  return s;
}

}  // namespace ssbd::io
