#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2plab/tensor.hpp"

namespace p2plab {

inline constexpr int kTokenLen = 8;  // BOS + up to 7 caption words

using TokenSequence = std::array<int, kTokenLen>;
using ReweightVector = std::array<float, kTokenLen>;

inline ReweightVector unit_reweight() {
    ReweightVector v;
    v.fill(1.0f);
    return v;
}

class Vocabulary {
public:
    // Word list for the scene caption grammar, BOS first, PAD last.
    static Vocabulary scene_grammar();
    explicit Vocabulary(std::vector<std::string> words);

    int size() const { return static_cast<int>(words_.size()); }
    int bos_id() const { return 0; }
    int pad_id() const { return size() - 1; }
    const std::string& word(int id) const { return words_[static_cast<size_t>(id)]; }
    int id(const std::string& word) const;  // throws naming the unknown word
    const std::vector<std::string>& words() const { return words_; }

    TokenSequence tokenize(const std::string& caption) const;
    std::string detokenize(const TokenSequence& tokens) const;
    int unpadded_len(const TokenSequence& tokens) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

struct AlignmentMap {
    std::vector<int> swapped;  // positions where source and target differ
    bool word_swap = false;    // exactly one differing position
};

// Requires equal unpadded lengths; zero diffs is the identity alignment.
AlignmentMap align_word_swap(const Vocabulary& vocab, const TokenSequence& src,
                             const TokenSequence& tgt);

// Scale factor c at every occurrence of word, 1.0 elsewhere. c in [-5, 5].
ReweightVector make_reweight_vector(const Vocabulary& vocab, const TokenSequence& tokens,
                                    const std::string& word, float c);

// Fixed sinusoidal position code added to every embedding row.
float position_code(int pos, int dim_index, int d_model);

// Row j = table[token_j] + position code. table is (vocab, d).
Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table);

}  // namespace p2plab
