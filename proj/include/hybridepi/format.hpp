#pragma once

#include <array>
#include <charconv>
#include <string>

namespace hybridepi {

/// Shortest text that reads back as exactly the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

} // namespace hybridepi
