#include "p2plab/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "p2plab/schedule.hpp"

namespace p2plab {

void SamplerConfig::validate(int t_train) const {
    if (steps < 1 || steps > t_train)
        throw std::runtime_error("sampler: steps must be in 1..t_train");
    if (guidance < 0.0f) throw std::runtime_error("sampler: guidance must be >= 0");
}

std::vector<std::pair<int, int>> sampler_timesteps(int t_train, int steps) {
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<size_t>(steps));
    for (int j = 0; j < steps; ++j) {
        const int t = t_train - static_cast<int>(static_cast<int64_t>(j) * t_train / steps);
        const int t_prev = t_train - static_cast<int>(static_cast<int64_t>(j + 1) * t_train / steps);
        out.emplace_back(t, t_prev);
    }
    return out;
}

Tensor initial_latent(uint64_t seed, int side) {
    RandomStream rng(seed, Stream::init_noise);
    Tensor z({3, side, side});
    rng.fill_normal(z.data);
    return z;
}

Image state_to_image(const Tensor& x) {
    const int side = x.dim(1);
    Image img(side, x.dim(2));
    for (size_t i = 0; i < x.data.size(); ++i)
        img.data[i] = std::clamp((x.data[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
    return img;
}

Tensor image_to_state(const Image& img) {
    Tensor x({3, img.h, img.w});
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = img.data[i] * 2.0f - 1.0f;
    return x;
}

SampleResult sample(const Model& model, const TokenSequence& prompt, const SamplerConfig& cfg,
                    AttentionController* controller, bool keep_states,
                    const StepCallback& step_cb) {
    cfg.validate(model.schedule.t_train);
    const auto& table = model.net->params().at("text.table");
    const Tensor ctx_cond = embed_tokens(prompt, table);
    const Tensor ctx_null = embed_tokens(model.vocab.tokenize(""), table);

    SampleResult result;
    Tensor z = initial_latent(cfg.seed, model.arch.side);
    const auto steps = sampler_timesteps(model.schedule.t_train, cfg.steps);
    DenoiserPass pass_u, pass_c;
    if (keep_states) result.states.reserve(steps.size());
    for (int i = 0; i < static_cast<int>(steps.size()); ++i) {
        const auto [t, t_prev] = steps[static_cast<size_t>(i)];
        const Tensor& eps_u = model.net->forward(z, t, ctx_null, nullptr, pass_u);
        AttentionHookCtx hooks;
        hooks.tape = &result.tape;
        hooks.controller = controller;
        hooks.step = i;
        const Tensor& eps_c = model.net->forward(z, t, ctx_cond, &hooks, pass_c);
        const Tensor eps = cfg_combine(eps_u, eps_c, cfg.guidance);
        z = ddim_step(z, eps, t, t_prev, model.schedule);
        if (step_cb) step_cb(i, z, result.tape);
        if (keep_states) result.states.push_back(z);
    }
    result.image = state_to_image(z);
    return result;
}

}  // namespace p2plab
