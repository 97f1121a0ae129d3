#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace bias {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's full contents.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace bias
