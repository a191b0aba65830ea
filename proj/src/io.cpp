#include "fastvol/io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "fastvol/errors.hpp"

namespace fastvol {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

CsvWriter::CsvWriter(std::string path) : path_(std::move(path)) {}

void CsvWriter::header(const std::vector<std::string>& cols) {
  if (cols.empty()) fail(ErrorCode::ConfigError, "csv header must not be empty");
  cols_ = cols.size();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += cols[i];
  }
  buf_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != cols_) fail(ErrorCode::ConfigError, "csv row width != header width");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += cells[i];
  }
  buf_ += '\n';
}

void CsvWriter::row_values(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(fmt_g17(v));
  row(cells);
}

std::string CsvWriter::finish() {
  if (finished_) fail(ErrorCode::ConfigError, "csv writer finished twice");
  finished_ = true;
  std::ofstream out(path_, std::ios::binary);
  if (!out) fail(ErrorCode::ConfigError, "cannot open " + path_ + " for writing");
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  out.close();
  return hex64(fnv1a64(buf_));
}

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& resolved_config,
                             const std::vector<ManifestOutput>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kToolVersion;
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char ts[32];
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  j["timestamp"] = ts;
  j["config"] = resolved_config;
  auto& outs = j["outputs"] = nlohmann::json::array();
  for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"digest", o.digest}});
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::ConfigError, "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace fastvol
