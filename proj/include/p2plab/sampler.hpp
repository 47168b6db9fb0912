#pragma once

#include <functional>

#include "p2plab/checkpoint.hpp"
#include "p2plab/image.hpp"

namespace p2plab {

struct SamplerConfig {
    int steps = 50;
    float guidance = 3.0f;
    uint64_t seed = 0;

    void validate(int t_train) const;
};

// Descending (t, t_prev) pairs covering t_train down to 0 in `steps` hops.
std::vector<std::pair<int, int>> sampler_timesteps(int t_train, int steps);

// Initial latent drawn from the seed alone, so synchronized runs share it.
Tensor initial_latent(uint64_t seed, int side);

Image state_to_image(const Tensor& x);
Tensor image_to_state(const Image& img);

struct SampleResult {
    Image image;
    AttentionTape tape;
    std::vector<Tensor> states;  // state after each step, kept on request
};

// Per-step transform applied after the DDIM update (local blending hooks in
// here). Receives the running tape of the conditional branch.
using StepCallback = std::function<void(int step, Tensor& state, const AttentionTape& tape)>;

// Deterministic DDIM sampling. The tape records the conditional branch: raw
// maps and values at every attention site, S x 3 entries. The controller, when
// present, may override maps/values at each site of the conditional branch.
SampleResult sample(const Model& model, const TokenSequence& prompt, const SamplerConfig& cfg,
                    AttentionController* controller = nullptr, bool keep_states = false,
                    const StepCallback& step_cb = nullptr);

}  // namespace p2plab
