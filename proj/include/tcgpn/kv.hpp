#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace tcgpn {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` text. `#` starts a comment; blank lines are ignored.
/// Duplicate keys and lines without `=` are rejected with their line number.
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);
std::map<std::string, std::string> to_map(const KeyValues& kv);

bool parse_bool(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);
std::size_t parse_count(const std::string& key, const std::string& value);
std::string format_real(double v);

}  // namespace tcgpn
