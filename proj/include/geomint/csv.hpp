#pragma once

// CSV output with '#'-prefixed key=value metadata lines. Files are written
// atomically (temporary file + rename) and doubles use shortest round-trip
// formatting, so identical runs produce byte-identical files.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geomint/core.hpp"

namespace geomint {

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::filesystem::path path) : path_(std::move(path)) {}

  void meta(std::string_view key, std::string_view value) {
    buf_ << "# " << key << "=" << value << "\n";
  }
  void meta(std::string_view key, double value) { meta(key, format_double(value)); }
  void meta(std::string_view key, long long value) { meta(key, std::to_string(value)); }
  void meta(std::string_view key, int value) { meta(key, std::to_string(value)); }

  void columns(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) buf_ << (i ? "," : "") << names[i];
    buf_ << "\n";
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i)
      buf_ << (i ? "," : "") << format_double(values[i]);
    buf_ << "\n";
  }

  void raw_line(std::string_view line) { buf_ << line << "\n"; }

  /// Write the buffered content atomically.
  void commit() {
    namespace fs = std::filesystem;
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    const fs::path tmp = path_.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw ConfigError("cannot write output file: " + tmp.string());
      out << buf_.str();
    }
    fs::rename(tmp, path_);
  }

 private:
  std::filesystem::path path_;
  std::ostringstream buf_;
};

}  // namespace geomint
