#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geop2p/message.hpp"

namespace geop2p {

struct WireError : std::runtime_error {
    explicit WireError(const char* what) : std::runtime_error(what) {}
};

// Binary message layout: one tag byte (the variant index), then the
// fields in declaration order. Integers are little-endian 64-bit unless
// noted, doubles are IEEE-754 bit patterns, lists carry a 32-bit count,
// zone ids use their one-length-byte encoding. See README for the table.
std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> in);

} // namespace geop2p
