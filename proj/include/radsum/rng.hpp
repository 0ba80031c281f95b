#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace radsum {

// Deterministic xoshiro256** generator with splitmix64 seeding.
// Every source of randomness in the project goes through this class so runs
// are bit-reproducible across platforms; std:: distributions are
// implementation-defined and are not used.
class Rng {
  public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed);

    // Independent substream addressed by up to three tags. Streams derived
    // from distinct (seed, tags) are decorrelated; used for per-report,
    // per-step and per-prompt randomness without shared mutable state.
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform();

    // Uniform integer in [0, bound). bound must be > 0.
    uint64_t uniform_below(uint64_t bound);

    // Standard normal via Box-Muller, one spare cached.
    double gauss();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // State words for checkpoint serialization. Pending Box-Muller spares are
    // intentionally not part of the state; serialize between whole draws.
    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) {
        s_ = s;
        has_spare_ = false;
    }

  private:
    std::array<uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace radsum
