#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace radsum {

// FNV-1a, used for content fingerprints and stream derivation. Not cryptographic.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64_u64(uint64_t v, uint64_t h = 0xcbf29ce484222325ull) {
    for (int i = 0; i < 8; ++i) {
        h ^= v & 0xff;
        h *= 0x100000001b3ull;
        v >>= 8;
    }
    return h;
}

std::string to_hex(uint64_t v);

// Whole-file IO. read_file throws std::runtime_error naming the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);

std::string lowercase_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// Fixed-point formatting helpers so artifacts are byte-stable.
std::string format_fixed(double v, int decimals);

// Number of worker threads: RADSUM_THREADS if set, else hardware_concurrency,
// clamped to [1, 64].
int worker_threads();

// Runs fn(i) for i in [0, n) across worker threads with a static partition.
// Callers own determinism: fn(i) must write only to slot i outputs.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace radsum
