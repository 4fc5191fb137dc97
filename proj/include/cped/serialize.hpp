#pragma once

// Shared JSON helpers for checkpoints.

#include <filesystem>
#include <string>

#include "cped/tensor.hpp"
#include "json.hpp"

namespace cped {

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

// Shortest text that parses back to the identical double ("%.17g").
std::string format_double(double v);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes: full dump then close.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cped
