// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cpmoe {

/// Ordered name/value pairs, serialized as one line of `name=value` tokens
/// separated by spaces. The first field is always `kind`.
class MetricsRecord {
 public:
  MetricsRecord() = default;
  explicit MetricsRecord(std::string kind);

  MetricsRecord& set(std::string_view name, double value);
  MetricsRecord& set(std::string_view name, std::int64_t value);
  MetricsRecord& set(std::string_view name, std::uint64_t value);
  MetricsRecord& set(std::string_view name, int value) {
    return set(name, static_cast<std::int64_t>(value));
  }
  /// Spaces and '=' in text values are replaced with '_'.
  MetricsRecord& set(std::string_view name, std::string_view value);
  MetricsRecord& set(std::string_view name, const char* value) {
    return set(name, std::string_view(value));
  }

  std::string_view kind() const;
  std::optional<std::string> text(std::string_view name) const;
  std::optional<double> number(std::string_view name) const;
  /// number() that throws ContractError when the field is missing.
  double require(std::string_view name) const;
  const std::vector<std::pair<std::string, std::string>>& fields() const noexcept {
    return fields_;
  }

  std::string to_line() const;
  /// Throws CorruptionError on a malformed line.
  static MetricsRecord parse(std::string_view line);

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

/// Appends records to a file, one per line, flushing after each.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path, bool append = true);
  void write(const MetricsRecord& record);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Tab-separated table with a header row.
std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows, char delim = '\t');

/// Splits a table produced by format_table back into cells.
std::vector<std::vector<std::string>> parse_table(std::string_view text, char delim = '\t');

}  // namespace cpmoe
