#ifndef FALAB_REPORT_IO_HPP_
#define FALAB_REPORT_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace falab {

/// Writes to "<path>.tmp" and renames over path.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& contents);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view data);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// Minimal CSV table with a fixed header.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

using LogSink = std::function<void(std::string_view)>;

/// Replaces the log sink (stderr by default); returns the previous one.
LogSink set_log_sink(LogSink sink);
void log_warning(std::string_view message);

}  // namespace falab

#endif  // FALAB_REPORT_IO_HPP_
