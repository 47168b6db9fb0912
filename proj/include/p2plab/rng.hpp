#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace p2plab {

// Philox4x32-10 counter-based generator. Every block is a pure function of
// (key, counter), so any position in a stream is addressable and two runs
// with the same seed draw identical values in identical order.
namespace philox {
std::array<uint32_t, 4> block(uint64_t key, uint64_t counter);
}

// Fixed stream ids keep independent consumers of one seed decorrelated.
enum class Stream : uint32_t {
    init_noise = 1,   // sampler z_T
    weight_init = 2,  // denoiser parameter init
    train_batch = 3,  // batch index draws
    train_noise = 4,  // epsilon draws
    train_time = 5,   // timestep draws
    train_null = 6,   // null-prompt coin flips
    dataset = 7,      // scene spec draws
    test = 100,       // unit-test scratch streams
};

class RandomStream {
public:
    RandomStream(uint64_t seed, Stream stream);

    uint32_t next_u32();
    double next_double();  // uniform in [0, 1)
    float next_normal();   // standard normal via Box-Muller
    int next_int(int n);   // uniform in [0, n), rejection sampled
    void fill_normal(std::span<float> out);

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> buf_{};
    int pos_ = 4;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace p2plab
