// Mean-field run of the 21 Nov 2008 outbreak from 04:00 to 16:00, printed hourly.

#include <cstdio>

#include "hybridepi/experiments.hpp"

int main() {
    using namespace hybridepi;
    const Trajectory traj = predict_outbreak(conficker_2008(), conficker_2008_topology(), conficker_2008_initial());
    std::printf("%5s %10s %10s %10s\n", "time", "S", "I", "R");
    for (const auto& s : traj) {
        if (s.t % 6 != 0) continue;
        const long minutes = 4 * 60 + s.t * 10;
        std::printf("%02ld:%02ld %10.0f %10.0f %10.0f\n", minutes / 60, minutes % 60, s.S, s.I, s.R);
    }
}
