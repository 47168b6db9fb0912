#pragma once

#include <optional>
#include <string>
#include <vector>

#include "p2plab/sampler.hpp"

namespace p2plab {

enum class EditMethod : uint8_t { baseline_p2p, cl_p2p };
enum class VSource : uint8_t { reference, target };

const char* name_of(EditMethod m);
const char* name_of(VSource v);

struct EditWords {
    std::string source_word;
    std::string target_word;
};

struct EditConfig {
    EditMethod method = EditMethod::baseline_p2p;
    float silhouette_k = 0.0f;
    float cross_replace = 0.8f;  // fraction of steps with cross-map injection
    float self_replace = 0.2f;   // fraction of steps with self-map injection
    float v_inject = 0.8f;       // cl_p2p: fraction of late steps using target V
    bool local_editing = false;
    std::optional<EditWords> edit_words;  // required when local_editing is on
    std::optional<ReweightVector> reweight;
    VSource baseline_v_source = VSource::reference;

    void validate() const;
};

struct Presets {
    // (k, cross replace, self replace) hyperparameter sets.
    static EditConfig literature();  // 0.3 / 0.8 / 0.2, local editing on
    static EditConfig optimized();   // 0.0 / 0.2 / 0.8, local editing off
};

// Number of injection-active steps: ceil(tau * total), guarded against
// binary-representation excess so exact products stay exact.
int inject_steps(double tau, int total);

// Steps are counted from pure noise, so tau = 0.8 is a long injection window.
bool should_inject(int step, int total, double tau);

// Full-map replacement for word swap: the source run's recorded map stands in
// for the target's, then reweight scales its columns.
Tensor ebw_swap(const Tensor& raw_target_map, const Tensor& recorded_source_map,
                const AlignmentMap& alignment, const ReweightVector* reweight);

const Tensor& inject_self(const Tensor& raw_target_map, const Tensor& recorded_source_map,
                          bool active);

// Diffusion time runs high to low as step runs 0..total-1, so the target's V
// takes over for the last ceil(tau1 * total) steps.
const Tensor& edit_v(const Tensor& v_reference, const Tensor& v_target, int step, int total,
                     double tau1);

struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<float> a;  // values exactly 0 or 1
};

struct WordMaskAccumulator {
    Tensor sum;  // (res, res)
    int count = 0;

    void add(const Tensor& cross_map, int token_pos);  // map is (pixels, L)
    Tensor snapshot() const;  // mean over added maps, max-normalized to [0, 1]
};

// k = 0 is the all-ones mask (edit everywhere); otherwise strict threshold,
// so k = 1 blanks the mask entirely. Upsampled nearest to out_side.
BinaryMask binarize(const Tensor& mask, float k, int out_side = 32);
BinaryMask union_masks(const BinaryMask& a, const BinaryMask& b);

// Pins pixels outside alpha to the reference state. Binary alpha makes this
// an exact per-pixel selection.
void local_blend(const Tensor& x_ref, Tensor& x_tar, const BinaryMask& alpha);

struct EditResult {
    Image x_src;
    Image x_tar;
    std::vector<BinaryMask> alpha_history;
    AttentionTape tape_src;
    AttentionTape tape_tgt;
};

// Two synchronized runs from one seed: pass 1 samples the source prompt and
// records raw attention; pass 2 samples the target prompt with per-site
// map/value overrides and optional local blending.
EditResult run_edit(const Model& model, const std::string& source_prompt,
                    const std::string& target_prompt, const SamplerConfig& sampler,
                    const EditConfig& cfg);

struct CycleResult {
    EditResult forward;
    EditResult reverse;
    double cycle_error = 0.0;  // mse(reverse.x_tar, forward.x_src)
};

CycleResult run_cycle(const Model& model, const std::string& source_prompt,
                      const std::string& target_prompt, const SamplerConfig& sampler,
                      const EditConfig& cfg);

}  // namespace p2plab
