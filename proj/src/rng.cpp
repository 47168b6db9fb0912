#include "p2plab/rng.hpp"

#include <cmath>

namespace p2plab {

namespace philox {

namespace {
constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<uint32_t, 4>& c, uint32_t k0, uint32_t k1) {
    const uint64_t p0 = static_cast<uint64_t>(kMul0) * c[0];
    const uint64_t p1 = static_cast<uint64_t>(kMul1) * c[2];
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
}
}  // namespace

std::array<uint32_t, 4> block(uint64_t key, uint64_t counter) {
    std::array<uint32_t, 4> c = {static_cast<uint32_t>(counter),
                                 static_cast<uint32_t>(counter >> 32), 0u, 0u};
    uint32_t k0 = static_cast<uint32_t>(key);
    uint32_t k1 = static_cast<uint32_t>(key >> 32);
    for (int r = 0; r < 10; ++r) {
        round_once(c, k0, k1);
        k0 += kWeyl0;
        k1 += kWeyl1;
    }
    return c;
}

}  // namespace philox

RandomStream::RandomStream(uint64_t seed, Stream stream)
    : key_(seed ^ (static_cast<uint64_t>(stream) * 0x9E3779B97F4A7C15ull)) {}

uint32_t RandomStream::next_u32() {
    if (pos_ == 4) {
        buf_ = philox::block(key_, counter_++);
        pos_ = 0;
    }
    return buf_[static_cast<size_t>(pos_++)];
}

double RandomStream::next_double() {
    return static_cast<double>(next_u32()) * 0x1.0p-32;
}

float RandomStream::next_normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] so the log stays finite.
    const double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1.0p-32;
    const double u2 = static_cast<double>(next_u32()) * 0x1.0p-32;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
}

int RandomStream::next_int(int n) {
    const uint32_t un = static_cast<uint32_t>(n);
    const uint32_t limit = UINT32_MAX - UINT32_MAX % un;
    uint32_t r;
    do {
        r = next_u32();
    } while (r >= limit);
    return static_cast<int>(r % un);
}

void RandomStream::fill_normal(std::span<float> out) {
    for (float& v : out) v = next_normal();
}

}  // namespace p2plab
