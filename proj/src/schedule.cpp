#include "p2plab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace p2plab {

NoiseSchedule NoiseSchedule::linear(int t_train, float beta_start, float beta_end) {
    if (t_train < 1) throw std::runtime_error("schedule: t_train must be >= 1");
    if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f))
        throw std::runtime_error("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.t_train = t_train;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.assign(static_cast<size_t>(t_train) + 1, 0.0f);
    s.alpha.assign(static_cast<size_t>(t_train) + 1, 1.0f);
    s.alpha_bar.assign(static_cast<size_t>(t_train) + 1, 1.0f);
    for (int t = 1; t <= t_train; ++t) {
        const float frac = t_train == 1 ? 0.0f : static_cast<float>(t - 1) / (t_train - 1);
        s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0f - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t - 1)] * s.alpha[static_cast<size_t>(t)];
    }
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (!x0.same_shape(eps)) throw std::runtime_error("q_sample: shape mismatch");
    const float ab = s.alpha_bar[static_cast<size_t>(t)];
    const float a = std::sqrt(ab);
    const float b = std::sqrt(1.0f - ab);
    Tensor out = x0;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float g) {
    if (!eps_uncond.same_shape(eps_cond)) throw std::runtime_error("cfg_combine: shape mismatch");
    Tensor out = eps_uncond;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = eps_uncond.data[i] + g * (eps_cond.data[i] - eps_uncond.data[i]);
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (!(t > t_prev) || t_prev < 0) throw std::runtime_error("ddim_step: need t > t_prev >= 0");
    const float ab_t = s.alpha_bar[static_cast<size_t>(t)];
    const float ab_p = s.alpha_bar[static_cast<size_t>(t_prev)];
    const float sq_t = std::sqrt(ab_t);
    const float sq_1m_t = std::sqrt(1.0f - ab_t);
    const float sq_p = std::sqrt(ab_p);
    const float sq_1m_p = std::sqrt(1.0f - ab_p);
    Tensor out = x_t;
    for (size_t i = 0; i < out.data.size(); ++i) {
        float x0 = (x_t.data[i] - sq_1m_t * eps_hat.data[i]) / sq_t;
        x0 = std::clamp(x0, -1.0f, 1.0f);
        out.data[i] = sq_p * x0 + sq_1m_p * eps_hat.data[i];
    }
    return out;
}

}  // namespace p2plab
