#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spectrum::wire {

// Messages and trace details are flat text: space-separated tokens, with
// command encodings (which never contain spaces) riding as single tokens.

inline void append_token(std::string& out, std::string_view tok) {
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
}

inline void append_token(std::string& out, long long v) {
    char buf[24];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    append_token(out, std::string_view(buf, p - buf));
}

template <typename... Ts>
std::string join(Ts&&... parts) {
    std::string out;
    (append_token(out, parts), ...);
    return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep = ' ') {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (start <= s.size()) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

// Split into at most `max_parts` pieces; the final piece keeps any further
// separators (command text embedded in trace lines relies on this).
inline std::vector<std::string_view> split_n(std::string_view s, char sep, size_t max_parts) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (out.size() + 1 < max_parts) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) break;
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    out.push_back(s.substr(start));
    return out;
}

inline long long to_int(std::string_view tok, long long fallback = 0) {
    long long v = fallback;
    std::from_chars(tok.data(), tok.data() + tok.size(), v);
    return v;
}

inline std::string to_hex(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 15]);
    }
    return out;
}

inline std::string from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return 0;
    };
    std::string out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i + 1 < hex.size(); i += 2)
        out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
    return out;
}

// splitmix64: deterministic hash/rng step used for jitter and backoff draws.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace spectrum::wire
