#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace colliderlab::pipeline::detail {

/// Throws MissingStageOutput naming `producing_stage` when the file is absent.
std::string read_text(const std::filesystem::path &path, std::string_view producing_stage);
/// Write-then-rename, creating parent directories.
void write_text(const std::filesystem::path &path, std::string_view text);
std::string utc_timestamp();
std::string table_text(const std::vector<std::string> &header,
                       const std::vector<std::vector<std::string>> &rows);
std::string opt_double(const std::optional<double> &v);

}  // namespace colliderlab::pipeline::detail
