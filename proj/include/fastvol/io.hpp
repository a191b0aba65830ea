#ifndef FASTVOL_IO_HPP
#define FASTVOL_IO_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fastvol {

inline constexpr const char* kToolVersion = "fastvol 0.1.0";

// shortest round-trip decimal; '.' decimal point, locale-free
std::string fmt_g17(double v);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Buffered CSV writer: headers mandatory; finish() writes the file and
// returns the content digest recorded in the run manifest.
class CsvWriter {
 public:
  explicit CsvWriter(std::string path);
  void header(const std::vector<std::string>& cols);
  void row(const std::vector<std::string>& cells);
  void row_values(const std::vector<double>& values);
  std::string finish();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string buf_;
  std::size_t cols_ = 0;
  bool finished_ = false;
};

struct ManifestOutput {
  std::string path;
  std::string digest;
};

// Run manifest: command, fully resolved config, tool version, timestamp and
// output digests; sufficient to reproduce every artifact bit-exactly (the
// timestamp is informational and excluded from reproducibility comparisons).
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& resolved_config,
                             const std::vector<ManifestOutput>& outputs);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace fastvol

#endif
