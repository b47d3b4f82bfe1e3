#include "denma/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "denma/error.hpp"

namespace denma::io {

std::string format_double(double value) {
  std::array<char, 64> buffer{};
  auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{}) throw Error(ErrorCode::Io, "cannot format number");
  return std::string(buffer.data(), end);
}

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::optional<long long> parse_integer(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::string_view trim(std::string_view text) {
  constexpr std::string_view ws = " \t\r\n";
  const auto first = text.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(ws);
  return text.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view text, char delimiter) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delimiter, start);
    out.emplace_back(trim(text.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<std::size_t> CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

namespace {

std::vector<std::string> parse_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(was_quoted ? field : std::string(trim(field)));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorCode::ParseFailure, "unterminated quote on line " + std::to_string(line_no));
  }
  fields.push_back(was_quoted ? field : std::string(trim(field)));
  return fields;
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool have_header = false;
  // Skip a UTF-8 byte order mark.
  if (text.substr(0, 3) == "\xEF\xBB\xBF") start = 3;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    start = end + 1;
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto fields = parse_csv_line(line, line_no);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != table.header.size()) {
        throw Error(ErrorCode::ParseFailure,
                    "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(fields));
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw Error(ErrorCode::ParseFailure, "empty delimited file");
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ParseFailure,
                  "configuration line " + std::to_string(line_no) + " lacks '='");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) {
      throw Error(ErrorCode::ParseFailure, "empty key on line " + std::to_string(line_no));
    }
    kv.set(key, std::string(trim(line.substr(eq + 1))));
  }
  return kv;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

bool KeyValues::contains(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KeyValues::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string KeyValues::require(const std::string& key) const {
  auto value = get(key);
  if (!value) throw Error(ErrorCode::ParseFailure, "missing configuration key '" + key + "'");
  return *value;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  auto parsed = parse_double(*value);
  if (!parsed) throw Error(ErrorCode::ParseFailure, "key '" + key + "' is not a number");
  return *parsed;
}

long long KeyValues::get_integer(const std::string& key, long long fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  auto parsed = parse_integer(*value);
  if (!parsed) throw Error(ErrorCode::ParseFailure, "key '" + key + "' is not an integer");
  return *parsed;
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           std::vector<double> fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  std::vector<double> out;
  for (const auto& item : split(*value, ',')) {
    auto parsed = parse_double(item);
    if (!parsed) throw Error(ErrorCode::ParseFailure, "key '" + key + "' has a non-numeric entry");
    out.push_back(*parsed);
  }
  return out;
}

std::string KeyValues::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace denma::io
