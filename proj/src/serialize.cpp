#include "cped/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cped/error.hpp"

namespace cped {

nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json{{"shape", {t.rows(), t.cols()}}, {"data", t.vector()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw ValidationError("tensor shape must have 2 entries");
  return Tensor(shape[0], shape[1], j.at("data").get<std::vector<double>>());
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

}  // namespace cped
