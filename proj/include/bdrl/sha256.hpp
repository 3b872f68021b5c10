#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bdrl {

// FIPS 180-4 SHA-256, hex digest. Small enough to carry locally; used only
// for manifest content digests.
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::string& path);

}  // namespace bdrl
