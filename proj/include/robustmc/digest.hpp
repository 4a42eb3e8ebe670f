#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace robustmc {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::string_view data);
std::string sha256_hex(std::string_view data);
std::string to_hex(const Sha256& d);

// First eight digest bytes read big-endian.
std::uint64_t sha256_u64(std::string_view data);

}  // namespace robustmc
