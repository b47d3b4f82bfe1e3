#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace denma::io {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

std::string_view trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char delimiter);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

// Comma-separated, optional double-quoted fields, LF or CRLF line endings.
CsvTable parse_csv(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Flat `key = value` configuration text. `#` starts a comment line.
// Key order is preserved for re-emission.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;

  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_integer(const std::string& key, long long fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace denma::io
