#pragma once

#include <string>
#include <utility>
#include <vector>

namespace tcgpn {

/// Lower-case hex SHA-1 of `bytes`.
std::string sha1_hex(const std::string& bytes);

/// Object id git assigns to a file with these contents ("blob <size>\0" + bytes).
std::string git_blob_id(const std::string& bytes);

/// Git-style tree hash over (name, contents) pairs: SHA-1 of the sorted
/// "<blob id> <name>\n" lines.
std::string content_hash(std::vector<std::pair<std::string, std::string>> files);

}  // namespace tcgpn
