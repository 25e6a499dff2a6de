#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace incap {

// splitmix64, used to derive independent stream seeds from (seed, salt...) tuples.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t salt_a, uint64_t salt_b = 0) {
    return mix64(mix64(seed ^ 0x6a09e667f3bcc908ULL) ^ mix64(salt_a) ^ (mix64(salt_b) << 1));
}

// Deterministic RNG. All sampling is built on raw mt19937 output (which the
// standard specifies exactly), never on std::*_distribution, so sequences are
// identical across compilers and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(mix64(seed))) {}

    uint32_t next_u32() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() {
        uint64_t hi = gen_() >> 5;  // 27 bits
        uint64_t lo = gen_() >> 6;  // 26 bits
        return (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Index in [0, n). Modulo bias is irrelevant at the n used here.
    size_t next_index(size_t n) { return n == 0 ? 0 : static_cast<size_t>(gen_()) % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

  private:
    std::mt19937 gen_;
};

} // namespace incap
