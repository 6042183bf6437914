#include "lumina/runio.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>

#include "lumina/common.hpp"

namespace lumina::runio {

std::filesystem::path prepare_run_dir(const std::string& out) {
    std::filesystem::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv("LUMINA_RUN_DIR")) p = std::filesystem::path(root) / p;
    }
    std::filesystem::create_directories(p);
    return p;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path.string());
    out << text;
    if (!out) throw ValidationError("write failed: " + path.string());
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string timestamp_tag() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
    return buf;
}

}  // namespace lumina::runio
