#pragma once

#include <memory>
#include <string>

#include "p2plab/denoiser.hpp"
#include "p2plab/schedule.hpp"
#include "p2plab/text_encoder.hpp"

namespace p2plab {

// Everything a sampling run needs: weights, schedule, vocabulary.
struct Model {
    DenoiserConfig arch;
    NoiseSchedule schedule;
    Vocabulary vocab = Vocabulary::scene_grammar();
    std::unique_ptr<Denoiser> net;
    float final_loss = -1.0f;

    Model clone_config() const;  // same arch/schedule/vocab, fresh weights
};

// File layout: magic "P2PL", u32 version, architecture descriptor with the
// attention-site census, vocabulary, named little-endian f32 tensors.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace p2plab
