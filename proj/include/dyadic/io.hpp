#pragma once

// CSV and JSONL writers. Floats are printed with 17 significant digits so a
// value read back is bit-identical to the one written.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dyadic/error.hpp"

namespace dyadic::io {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::ConfigError, "cannot open " + path.string());
    columns_ = header.size();
    write_fields(header);
  }

  class Row {
   public:
    explicit Row(CsvWriter& w) : w_(w) {}
    Row& operator<<(double v) {
      fields_.push_back(format_double(v));
      return *this;
    }
    Row& operator<<(long long v) {
      fields_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(int v) { return *this << static_cast<long long>(v); }
    Row& operator<<(std::size_t v) {
      fields_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(bool v) {
      fields_.emplace_back(v ? "true" : "false");
      return *this;
    }
    Row& operator<<(std::string_view v) {
      fields_.emplace_back(v);
      return *this;
    }
    Row& operator<<(const char* v) { return *this << std::string_view(v); }
    ~Row() noexcept(false) { w_.write_fields(fields_); }

   private:
    CsvWriter& w_;
    std::vector<std::string> fields_;
  };

  Row row() { return Row(*this); }

 private:
  void write_fields(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw Error(ErrorKind::ConfigError, "csv row width mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_quote(fields[i]);
    }
    out_ << "\r\n";
  }

  std::ofstream out_;
  std::size_t columns_ = 0;
};

/// nlohmann prints doubles with the shortest round-trip form; non-finite
/// values have no JSON spelling, so they become strings.
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline nlohmann::json json_array(const std::vector<double>& xs) {
  auto a = nlohmann::json::array();
  for (double v : xs) a.push_back(json_number(v));
  return a;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::ConfigError, "cannot open " + path.string());
  }
  void write(const nlohmann::json& record) { out_ << record.dump(-1, ' ', false) << '\n'; }

 private:
  std::ofstream out_;
};

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::ConfigError, "cannot open " + path.string());
  out << text;
}

}  // namespace dyadic::io
