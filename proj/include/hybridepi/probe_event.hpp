#pragma once

#include <cstdint>
#include <tuple>

namespace hybridepi {

/// One probe packet seen by the telescope.
struct ProbeEvent {
    std::int64_t timestamp = 0; // epoch seconds
    std::uint32_t source_addr = 0;

    friend bool operator==(const ProbeEvent&, const ProbeEvent&) = default;
    friend bool operator<(const ProbeEvent& a, const ProbeEvent& b) {
        return std::tie(a.timestamp, a.source_addr) < std::tie(b.timestamp, b.source_addr);
    }
};

/// /24 prefix index of an IPv4 address.
constexpr std::uint32_t subnet_of(std::uint32_t addr) { return addr >> 8; }

} // namespace hybridepi
