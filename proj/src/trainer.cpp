#include "p2plab/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "p2plab/parallel.hpp"
#include "p2plab/sampler.hpp"
#include "p2plab/schedule.hpp"

namespace p2plab {

Model make_model(const TrainConfig& cfg) {
    Model m;
    m.arch = cfg.arch;
    m.schedule = NoiseSchedule::linear(cfg.t_train, cfg.beta_start, cfg.beta_end);
    m.vocab = Vocabulary::scene_grammar();
    m.arch.vocab = m.vocab.size();
    m.net = std::make_unique<Denoiser>(m.arch);
    m.net->init_weights(cfg.seed);
    return m;
}

namespace {

float lr_at(const TrainConfig& cfg, int step) {
    if (step < cfg.warmup)
        return cfg.lr * static_cast<float>(step + 1) / static_cast<float>(cfg.warmup);
    const float tail = cfg.steps > cfg.warmup
                           ? static_cast<float>(step - cfg.warmup) /
                                 static_cast<float>(cfg.steps - cfg.warmup)
                           : 0.0f;
    const float floor = cfg.lr * cfg.lr_floor;
    return floor + (cfg.lr - floor) * 0.5f * (1.0f + std::cos(3.14159265358979f * tail));
}

}  // namespace

TrainStats train(const TrainConfig& cfg, Model& model) {
    const auto manifest = load_manifest(cfg.manifest);
    if (manifest.records.empty()) throw std::runtime_error("training dataset is empty");
    const std::string data_dir = std::filesystem::path(cfg.manifest).parent_path().string();

    // Load the whole dataset into memory as states and token sequences.
    std::vector<Tensor> x0;
    std::vector<TokenSequence> tokens;
    x0.reserve(manifest.records.size());
    tokens.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        const Image img = read_ppm(data_dir.empty() ? r.file : data_dir + "/" + r.file);
        x0.push_back(image_to_state(img));
        tokens.push_back(model.vocab.tokenize(r.caption));
    }
    const int n = static_cast<int>(x0.size());
    const TokenSequence null_tokens = model.vocab.tokenize("");

    Denoiser& net = *model.net;
    auto& params = net.params();
    const size_t n_tensors = params.tensors.size();

    std::vector<Tensor> adam_m = params.zeros_like();
    std::vector<Tensor> adam_v = params.zeros_like();
    std::vector<std::vector<Tensor>> sample_grads(static_cast<size_t>(cfg.batch));
    for (auto& g : sample_grads) g = params.zeros_like();
    std::vector<Tensor> grad = params.zeros_like();
    std::vector<DenoiserPass> passes(static_cast<size_t>(cfg.batch));
    std::vector<double> sample_loss(static_cast<size_t>(cfg.batch));

    RandomStream rng_batch(cfg.seed, Stream::train_batch);
    RandomStream rng_noise(cfg.seed, Stream::train_noise);
    RandomStream rng_time(cfg.seed, Stream::train_time);
    RandomStream rng_null(cfg.seed, Stream::train_null);

    std::ofstream curve;
    if (!cfg.curve_csv.empty()) {
        curve.open(cfg.curve_csv, std::ios::binary);
        if (!curve) throw std::runtime_error("cannot open for writing: " + cfg.curve_csv);
        curve << "step,loss,smoothed,lr\n";
    }
    char line[128];

    const float beta1 = 0.9f, beta2 = 0.999f, adam_eps = 1e-8f;
    double b1p = 1.0, b2p = 1.0;
    TrainStats stats;
    double smoothed = 0.0;
    bool smoothed_init = false;

    std::vector<int> idx(static_cast<size_t>(cfg.batch));
    std::vector<int> ts(static_cast<size_t>(cfg.batch));
    std::vector<Tensor> noise(static_cast<size_t>(cfg.batch));
    std::vector<char> use_null(static_cast<size_t>(cfg.batch));
    const int side = model.arch.side;

    for (int step = 0; step < cfg.steps; ++step) {
        // All draws happen up front on one thread, in a fixed order.
        for (int b = 0; b < cfg.batch; ++b) idx[static_cast<size_t>(b)] = rng_batch.next_int(n);
        for (int b = 0; b < cfg.batch; ++b)
            ts[static_cast<size_t>(b)] = 1 + rng_time.next_int(cfg.t_train);
        for (int b = 0; b < cfg.batch; ++b) {
            noise[static_cast<size_t>(b)].reset({3, side, side});
            rng_noise.fill_normal(noise[static_cast<size_t>(b)].data);
        }
        for (int b = 0; b < cfg.batch; ++b)
            use_null[static_cast<size_t>(b)] = rng_null.next_double() < cfg.null_prompt_fraction;

        parallel_for(cfg.batch, cfg.threads, [&](int b) {
            const size_t sb = static_cast<size_t>(b);
            for (auto& g : sample_grads[sb]) g.zero();
            const Tensor& x = x0[static_cast<size_t>(idx[sb])];
            const int t = ts[sb];
            const Tensor xt = q_sample(x, t, noise[sb], model.schedule);
            const TokenSequence& tok = use_null[sb] ? null_tokens : tokens[static_cast<size_t>(idx[sb])];
            const Tensor ctx = embed_tokens(tok, params.at("text.table"));
            const Tensor& eps_hat = net.forward(xt, t, ctx, nullptr, passes[sb]);
            const int64_t count = eps_hat.numel();
            Tensor d_eps;
            d_eps.dims = eps_hat.dims;
            d_eps.rank = eps_hat.rank;
            d_eps.data.assign(eps_hat.data.size(), 0.0f);
            double loss = 0.0;
            const float inv = 2.0f / static_cast<float>(count);
            for (int64_t i = 0; i < count; ++i) {
                const float diff = eps_hat.data[static_cast<size_t>(i)] -
                                   noise[sb].data[static_cast<size_t>(i)];
                loss += static_cast<double>(diff) * diff;
                d_eps.data[static_cast<size_t>(i)] = inv * diff;
            }
            sample_loss[sb] = loss / static_cast<double>(count);
            Tensor d_ctx({kTokenLen, model.arch.d_text});
            net.backward(d_eps, passes[sb], sample_grads[sb], d_ctx);
            // scatter the context gradient into the embedding table rows
            Tensor& table_g = sample_grads[sb][static_cast<size_t>(params.idx("text.table"))];
            for (int j = 0; j < kTokenLen; ++j) {
                const int id = tok[static_cast<size_t>(j)];
                for (int k = 0; k < model.arch.d_text; ++k) table_g(id, k) += d_ctx(j, k);
            }
        });

        // Ordered reduction: bit-identical for any thread count.
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) loss += sample_loss[static_cast<size_t>(b)];
        loss /= cfg.batch;
        const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
        for (size_t ti = 0; ti < n_tensors; ++ti) {
            Tensor& g = grad[ti];
            g.zero();
            for (int b = 0; b < cfg.batch; ++b)
                add_inplace(g, sample_grads[static_cast<size_t>(b)][ti]);
            scale_inplace(g, inv_batch);
        }

        if (cfg.grad_clip > 0.0f) {
            double norm2 = 0.0;
            for (const auto& g : grad)
                for (float v : g.data) norm2 += static_cast<double>(v) * v;
            const double norm = std::sqrt(norm2);
            if (norm > cfg.grad_clip) {
                const float s = static_cast<float>(cfg.grad_clip / norm);
                for (auto& g : grad) scale_inplace(g, s);
            }
        }

        const float lr = lr_at(cfg, step);
        b1p *= beta1;
        b2p *= beta2;
        const float mc = 1.0f / static_cast<float>(1.0 - b1p);
        const float vc = 1.0f / static_cast<float>(1.0 - b2p);
        for (size_t ti = 0; ti < n_tensors; ++ti) {
            float* w = params.tensors[ti].data.data();
            float* gm = adam_m[ti].data.data();
            float* gv = adam_v[ti].data.data();
            const float* g = grad[ti].data.data();
            const size_t cnt = params.tensors[ti].data.size();
            for (size_t i = 0; i < cnt; ++i) {
                gm[i] = beta1 * gm[i] + (1.0f - beta1) * g[i];
                gv[i] = beta2 * gv[i] + (1.0f - beta2) * g[i] * g[i];
                w[i] -= lr * (gm[i] * mc) / (std::sqrt(gv[i] * vc) + adam_eps);
            }
        }

        if (!smoothed_init) {
            smoothed = loss;
            smoothed_init = true;
            stats.initial_loss = static_cast<float>(loss);
        } else {
            smoothed = cfg.ema_decay * smoothed + (1.0 - cfg.ema_decay) * loss;
        }
        if (smoothed > 10.0 * stats.initial_loss + 1e-9)
            throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                     ": smoothed loss " + std::to_string(smoothed) +
                                     " vs initial " + std::to_string(stats.initial_loss));
        if (curve.is_open() && (step % cfg.csv_every == 0 || step == cfg.steps - 1)) {
            std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6g\n", step, loss, smoothed, lr);
            curve << line;
        }
    }

    stats.final_smoothed_loss = static_cast<float>(smoothed);
    stats.steps_run = cfg.steps;
    model.final_loss = stats.final_smoothed_loss;
    return stats;
}

}  // namespace p2plab
