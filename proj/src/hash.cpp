#include "tcgpn/hash.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <stdexcept>

namespace tcgpn {

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string git_blob_id(const std::string& bytes) {
  std::string obj = "blob " + std::to_string(bytes.size());
  obj += '\0';
  obj += bytes;
  return sha1_hex(obj);
}

std::string content_hash(std::vector<std::pair<std::string, std::string>> files) {
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& [name, bytes] : files) listing += git_blob_id(bytes) + " " + name + "\n";
  return sha1_hex(listing);
}

}  // namespace tcgpn
