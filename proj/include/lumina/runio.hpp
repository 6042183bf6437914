#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace lumina::runio {

/// Resolve a run directory: relative paths are rooted at $LUMINA_RUN_DIR when
/// that variable is set. The directory is created.
std::filesystem::path prepare_run_dir(const std::string& out);

void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// RFC 4180 field escaping (quotes fields containing comma, quote, CR or LF).
std::string csv_field(const std::string& s);

/// UTC timestamp tag, e.g. 20240301T120000.
std::string timestamp_tag();

}  // namespace lumina::runio
