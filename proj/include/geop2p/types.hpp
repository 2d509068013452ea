#pragma once

#include <cstdint>

namespace geop2p {

// Simulated network address. Unique per live peer, totally ordered;
// elections break ties toward the higher value.
using PeerAddr = std::uint64_t;

constexpr PeerAddr kNoPeer = 0; // addresses are allocated starting at 1

// Simulation clock. A single logical clock, no per-peer skew.
using SimTime = double;

} // namespace geop2p
