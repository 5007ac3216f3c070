#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

namespace climemu {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// "fnv1a64:" followed by 16 lowercase hex digits of the file contents.
std::string hash_file(const std::filesystem::path& path);

/// {relative_path: hash} for every regular file under `dir` except manifest.json.
nlohmann::json hash_directory(const std::filesystem::path& dir);

}  // namespace climemu
