#include "handfit/file_format.hpp"

#include <fstream>
#include <sstream>

#include "handfit/error.hpp"

namespace handfit {

void check_header(const nlohmann::json& j, const std::string& format, int major) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaViolation, "expected an object");
  const auto f = j.find("format");
  if (f == j.end() || !f->is_string() || f->get<std::string>() != format) {
    throw Error(ErrorKind::SchemaViolation, "expected format '" + format + "'");
  }
  const auto v = j.find("version");
  if (v == j.end() || !v->is_string()) {
    throw Error(ErrorKind::SchemaViolation, "missing version string");
  }
  const std::string ver = v->get<std::string>();
  int file_major = -1;
  try {
    std::size_t used = 0;
    file_major = std::stoi(ver, &used);
    if (used == 0) file_major = -1;
  } catch (const std::exception&) {
    file_major = -1;
  }
  if (file_major != major) {
    throw Error(ErrorKind::UnsupportedVersion,
                format + " version " + ver + " (supported major " + std::to_string(major) + ")");
  }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << j.dump() << '\n';
}

std::string dump_compact(const nlohmann::json& j) { return j.dump(); }

}  // namespace handfit
