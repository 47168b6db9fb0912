#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2plab/rng.hpp"
#include "p2plab/tensor.hpp"
#include "p2plab/text_encoder.hpp"

namespace p2plab {

// U-Net working at 32 -> 16 -> 8 with cross-attention at 16x16 and 8x8 and
// one self-attention block at 8x8. Channel widths are base, 2*base, 4*base.
struct DenoiserConfig {
    int side = 32;
    int base = 8;
    int d_text = 32;
    int d_time = 64;
    int vocab = 16;
    int groups = 4;

    int c0() const { return base; }
    int c1() const { return 2 * base; }
    int c2() const { return 4 * base; }
    bool operator==(const DenoiserConfig& o) const {
        return side == o.side && base == o.base && d_text == o.d_text && d_time == o.d_time &&
               vocab == o.vocab && groups == o.groups;
    }
};

enum class AttnKind : uint8_t { cross = 0, self_attn = 1 };

struct AttentionSite {
    int index = 0;  // order of consultation within one forward pass
    AttnKind kind = AttnKind::cross;
    int res = 0;

    bool operator==(const AttentionSite& o) const {
        return index == o.index && kind == o.kind && res == o.res;
    }
};

std::string to_string(const AttentionSite& site);

struct TapeEntry {
    int step = 0;
    AttentionSite site;
    Tensor map;     // raw post-softmax map, pre-override, pre-reweight
    Tensor values;  // raw value matrix
};

struct AttentionTape {
    std::vector<TapeEntry> entries;

    const TapeEntry& at(int step, const AttentionSite& site) const;
    void check_rows_normalized(float tol = 1e-5f) const;  // throws on violation
};

struct AttnOverride {
    const Tensor* map = nullptr;
    const Tensor* values = nullptr;
    const ReweightVector* reweight = nullptr;
};

class AttentionController {
public:
    virtual ~AttentionController() = default;
    // Receives the raw post-softmax map and value matrix; anything returned
    // replaces them for this site at this step.
    virtual AttnOverride intercept(const AttentionSite& site, int step, const Tensor& raw_map,
                                   const Tensor& raw_values) = 0;
};

struct AttentionHookCtx {
    AttentionTape* tape = nullptr;  // raw (map, values) recorded here when set
    AttentionController* controller = nullptr;
    int step = 0;
};

// Standalone attention used by the network blocks and directly testable.
// m = row_softmax(q k^T / sqrt(d)); effective map = override or m, then
// reweight scales columns with no renormalization; output = m_eff v_eff.
struct AttentionOutput {
    Tensor out;
    Tensor raw_map;
};
AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const ReweightVector* reweight, const Tensor* map_override,
                          const Tensor* v_override);

// Named parameter tensors in fixed construction order (defines checkpoint order).
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::unordered_map<std::string, int> index;

    Tensor& add(const std::string& name, std::initializer_list<int> dims);
    int idx(const std::string& name) const;
    Tensor& at(const std::string& name) { return tensors[static_cast<size_t>(idx(name))]; }
    const Tensor& at(const std::string& name) const {
        return tensors[static_cast<size_t>(idx(name))];
    }
    int64_t total_size() const;
    std::vector<Tensor> zeros_like() const;
};

// Per-forward intermediates, reusable across calls.
struct GnAct {
    Tensor xhat;
    Tensor invstd;  // one per group
    Tensor n;       // gamma * xhat + beta
};

struct ResAct {
    GnAct gn;
    Tensor a;  // silu(n)
    Tensor h;  // conv output + time bias
};

struct AttnAct {
    GnAct gn;
    Tensor xn;  // (pixels, C)
    Tensor q, k, v, m, o;
};

struct DenoiserPass {
    Tensor x;    // input copy
    Tensor ctx;  // (L, d_text)
    int t = 0;
    Tensor basis, t1p, t1, temb, tact;
    Tensor h_in, e0, h1, e1, a1, h2, m0, m1, m2, m3, mu, u1, s1, d1, du, u0, s0, d0;
    ResAct rb[6];
    AttnAct at16, at8s, at8c;
    GnAct out_gn;
    Tensor out_a;
    Tensor eps;
    bool hooked = false;  // true when an override-capable controller ran
};

class Denoiser {
public:
    explicit Denoiser(const DenoiserConfig& cfg);

    const DenoiserConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    void init_weights(uint64_t seed);

    // The fixed per-pass consultation order of attention sites.
    static std::vector<AttentionSite> attention_sites();

    // Deterministic for fixed inputs. hooks may be null (training path).
    const Tensor& forward(const Tensor& x, int t, const Tensor& ctx_emb, AttentionHookCtx* hooks,
                          DenoiserPass& pass) const;

    // Accumulates parameter gradients (aligned with params order) and the
    // context gradient. The pass must come from an unhooked forward.
    void backward(const Tensor& d_eps, const DenoiserPass& pass, std::vector<Tensor>& grads,
                  Tensor& d_ctx) const;

private:
    DenoiserConfig cfg_;
    ParamSet params_;
};

}  // namespace p2plab
