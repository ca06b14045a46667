// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/metrics.hpp"

#include <charconv>
#include <sstream>

#include "cpmoe/config_io.hpp"
#include "cpmoe/errors.hpp"

namespace cpmoe {

namespace {

std::string sanitize(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == ' ' || c == '=' || c == '\t' || c == '\n' || c == '\r') c = '_';
  }
  return out;
}

}  // namespace

MetricsRecord::MetricsRecord(std::string kind) { set("kind", std::string_view(kind)); }

MetricsRecord& MetricsRecord::set(std::string_view name, std::string_view value) {
  std::string key = sanitize(name);
  std::string v = sanitize(value);
  for (auto& [k, old] : fields_) {
    if (k == key) {
      old = std::move(v);
      return *this;
    }
  }
  fields_.emplace_back(std::move(key), std::move(v));
  return *this;
}

MetricsRecord& MetricsRecord::set(std::string_view name, double value) {
  return set(name, std::string_view(format_double(value)));
}

MetricsRecord& MetricsRecord::set(std::string_view name, std::int64_t value) {
  return set(name, std::string_view(std::to_string(value)));
}

MetricsRecord& MetricsRecord::set(std::string_view name, std::uint64_t value) {
  return set(name, std::string_view(std::to_string(value)));
}

std::string_view MetricsRecord::kind() const {
  if (fields_.empty() || fields_.front().first != "kind") return {};
  return fields_.front().second;
}

std::optional<std::string> MetricsRecord::text(std::string_view name) const {
  for (const auto& [k, v] : fields_) {
    if (k == name) return v;
  }
  return std::nullopt;
}

std::optional<double> MetricsRecord::number(std::string_view name) const {
  auto t = text(name);
  if (!t) return std::nullopt;
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(t->data(), t->data() + t->size(), out);
  if (ec != std::errc{} || ptr != t->data() + t->size()) return std::nullopt;
  return out;
}

double MetricsRecord::require(std::string_view name) const {
  auto n = number(name);
  if (!n) throw ContractError("metrics record has no numeric field '" + std::string(name) + "'");
  return *n;
}

std::string MetricsRecord::to_line() const {
  std::string line;
  for (const auto& [k, v] : fields_) {
    if (!line.empty()) line += ' ';
    line += k;
    line += '=';
    line += v;
  }
  return line;
}

MetricsRecord MetricsRecord::parse(std::string_view line) {
  MetricsRecord r;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    if (pos >= line.size()) break;
    auto end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    auto token = line.substr(pos, end - pos);
    const auto eq = token.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw CorruptionError("metrics line has a field without name=value: '" +
                            std::string(token) + "'");
    }
    r.fields_.emplace_back(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1)));
    pos = end;
  }
  if (r.kind().empty()) throw CorruptionError("metrics line does not start with kind=");
  return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw IoError("cannot open metrics file '" + path.string() + "'");
}

void MetricsWriter::write(const MetricsRecord& record) {
  out_ << record.to_line() << '\n';
  out_.flush();
  if (!out_) throw IoError("error while writing '" + path_.string() + "'");
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file '" + path.string() + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(MetricsRecord::parse(line));
  }
  return out;
}

std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows, char delim) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += delim;
      out += cells[i];
    }
    out += '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out;
}

std::vector<std::vector<std::string>> parse_table(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      auto end = line.find(delim, pos);
      cells.push_back(line.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
      if (end == std::string::npos) break;
      pos = end + 1;
    }
    out.push_back(std::move(cells));
  }
  return out;
}

}  // namespace cpmoe
