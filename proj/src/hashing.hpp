#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace gradal {

// FNV-1a 64-bit. Used for dataset fingerprints and config hashes
// (identity/compatibility checks, not security).
inline uint64_t fnv1a64(std::span<const unsigned char> bytes, uint64_t h = 1469598103934665603ULL) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64_str(const std::string& s, uint64_t h = 1469598103934665603ULL) {
    return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, h);
}

template <typename T>
uint64_t fnv1a64_pod_span(std::span<const T> xs, uint64_t h = 1469598103934665603ULL) {
    return fnv1a64({reinterpret_cast<const unsigned char*>(xs.data()), xs.size() * sizeof(T)}, h);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace gradal
