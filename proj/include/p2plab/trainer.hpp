#pragma once

#include <string>
#include <vector>

#include "p2plab/checkpoint.hpp"
#include "p2plab/synthetic_world.hpp"

namespace p2plab {

struct TrainConfig {
    std::string manifest;        // dataset manifest path
    int steps = 9000;
    int batch = 16;
    float lr = 2e-3f;
    int warmup = 200;
    float lr_floor = 0.1f;       // cosine decay target as a fraction of lr
    uint64_t seed = 1;
    int threads = 0;             // 0 = hardware (samples within a batch)
    float null_prompt_fraction = 0.1f;
    float ema_decay = 0.99f;
    float grad_clip = 1.0f;
    int t_train = 200;
    float beta_start = 1e-4f;
    float beta_end = 0.02f;
    DenoiserConfig arch;
    std::string curve_csv;       // optional training-curve output
    int csv_every = 25;
};

struct TrainStats {
    float final_smoothed_loss = 0.0f;
    float initial_loss = 0.0f;
    int steps_run = 0;
};

// Epsilon-prediction MSE training. Gradients are accumulated per sample and
// summed in sample order, so the result is bit-reproducible for a fixed seed
// regardless of thread count.
TrainStats train(const TrainConfig& cfg, Model& model);

// Convenience constructor for the model a TrainConfig describes.
Model make_model(const TrainConfig& cfg);

}  // namespace p2plab
