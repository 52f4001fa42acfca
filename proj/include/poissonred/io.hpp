#ifndef POISSONRED_IO_HPP
#define POISSONRED_IO_HPP

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace poissonred {

/// Shortest-safe round-trip text: 17 significant digits.
inline std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(h));
  return buffer;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

/// Builds CSV text row by row; numbers always go through format_double.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : columns_(header.size()) { append(header); }

  void add_row(std::span<const double> values) {
    if (values.size() != columns_) throw std::logic_error("csv row width mismatch");
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (k) text_ += ',';
      text_ += format_double(values[k]);
    }
    text_ += '\n';
  }
  void add_row(std::initializer_list<double> values) { add_row(std::span<const double>(values.begin(), values.size())); }

  /// Mixed rows: cells already rendered as text.
  void add_text_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw std::logic_error("csv row width mismatch");
    append(cells);
  }

  const std::string& str() const noexcept { return text_; }

 private:
  void append(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) text_ += ',';
      const std::string& c = cells[k];
      if (c.find_first_of(",\"\n") == std::string::npos) {
        text_ += c;
        continue;
      }
      text_ += '"';
      for (char ch : c) {
        if (ch == '"') text_ += '"';
        text_ += ch;
      }
      text_ += '"';
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

}  // namespace poissonred

#endif  // POISSONRED_IO_HPP
