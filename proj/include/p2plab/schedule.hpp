#pragma once

#include <vector>

#include "p2plab/tensor.hpp"

namespace p2plab {

// Forward-process constants indexed by diffusion time t in 1..t_train.
// alpha_bar[0] = 1 so t = 0 is the clean-data endpoint.
struct NoiseSchedule {
    int t_train = 0;
    float beta_start = 0.0f;
    float beta_end = 0.0f;
    std::vector<float> beta;       // [t_train + 1], beta[0] unused
    std::vector<float> alpha;      // 1 - beta
    std::vector<float> alpha_bar;  // running product, alpha_bar[0] = 1

    static NoiseSchedule linear(int t_train, float beta_start, float beta_end);
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

// eps_uncond + g (eps_cond - eps_uncond)
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float g);

// Deterministic reverse update (no injected noise). Predicted x0 is clamped
// to [-1, 1] before re-noising toward t_prev.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s);

}  // namespace p2plab
