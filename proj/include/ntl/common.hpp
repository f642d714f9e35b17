#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace ntl {

inline constexpr const char* kVersion = "0.1.0";

// Input/data problems (bad paths, malformed fleets). CLI exit code 1.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration (unknown keys, invalid values). CLI exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite training loss. CLI exit code 3.
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A measurement or feature that is absent propagates as quiet NaN.
inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

enum class Label : std::uint8_t { Normal = 0, Ntl = 1, Unlabeled = 2 };

inline const char* label_name(Label l) {
    switch (l) {
        case Label::Normal: return "normal";
        case Label::Ntl: return "ntl";
        default: return "unlabeled";
    }
}

// FNV-1a, used to fingerprint resolved configs in reports.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace ntl
