#include "p2plab/text_encoder.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace p2plab {

Vocabulary Vocabulary::scene_grammar() {
    return Vocabulary({"<bos>", "a", "on", "background", "red", "green", "blue", "yellow",
                       "purple", "circle", "square", "triangle", "white", "gray", "cyan",
                       "<pad>"});
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_.size() > 32)
        throw std::runtime_error("vocabulary must hold 2..32 words");
    for (size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<int>(i);
}

int Vocabulary::id(const std::string& word) const {
    const auto it = ids_.find(word);
    if (it == ids_.end()) throw std::runtime_error("unknown word: " + word);
    return it->second;
}

TokenSequence Vocabulary::tokenize(const std::string& caption) const {
    TokenSequence out;
    out.fill(pad_id());
    out[0] = bos_id();
    std::istringstream is(caption);
    std::string word;
    int pos = 1;
    while (is >> word) {
        if (pos >= kTokenLen) throw std::runtime_error("caption longer than " +
                                                       std::to_string(kTokenLen - 1) + " words");
        out[static_cast<size_t>(pos++)] = id(word);
    }
    return out;
}

std::string Vocabulary::detokenize(const TokenSequence& tokens) const {
    std::string s;
    for (int j = 1; j < kTokenLen; ++j) {
        if (tokens[static_cast<size_t>(j)] == pad_id()) break;
        if (!s.empty()) s += ' ';
        s += word(tokens[static_cast<size_t>(j)]);
    }
    return s;
}

int Vocabulary::unpadded_len(const TokenSequence& tokens) const {
    int n = 0;
    for (int t : tokens)
        if (t != pad_id()) ++n;
    return n;
}

AlignmentMap align_word_swap(const Vocabulary& vocab, const TokenSequence& src,
                             const TokenSequence& tgt) {
    if (vocab.unpadded_len(src) != vocab.unpadded_len(tgt))
        throw std::runtime_error(
            "alignment error: prompts differ in length (prompt refinement unsupported)");
    AlignmentMap map;
    for (int j = 0; j < kTokenLen; ++j) {
        if (src[static_cast<size_t>(j)] != tgt[static_cast<size_t>(j)]) map.swapped.push_back(j);
    }
    map.word_swap = map.swapped.size() == 1;
    return map;
}

ReweightVector make_reweight_vector(const Vocabulary& vocab, const TokenSequence& tokens,
                                    const std::string& word, float c) {
    if (c < -5.0f || c > 5.0f)
        throw std::runtime_error("reweight scale out of [-5, 5]: " + std::to_string(c));
    const int wid = vocab.id(word);
    ReweightVector v = unit_reweight();
    bool found = false;
    for (int j = 0; j < kTokenLen; ++j) {
        if (tokens[static_cast<size_t>(j)] == wid) {
            v[static_cast<size_t>(j)] = c;
            found = true;
        }
    }
    if (!found) throw std::runtime_error("reweight word not in prompt: " + word);
    return v;
}

float position_code(int pos, int dim_index, int d_model) {
    const int pair = dim_index / 2;
    const double freq = std::pow(10000.0, -2.0 * pair / d_model);
    const double angle = pos * freq;
    return static_cast<float>(dim_index % 2 == 0 ? std::sin(angle) : std::cos(angle));
}

Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table) {
    const int d = table.dim(1);
    Tensor out({kTokenLen, d});
    for (int j = 0; j < kTokenLen; ++j) {
        const int id = tokens[static_cast<size_t>(j)];
        if (id < 0 || id >= table.dim(0)) throw std::runtime_error("token id outside table");
        for (int k = 0; k < d; ++k) out(j, k) = table(id, k) + position_code(j, k, d);
    }
    return out;
}

}  // namespace p2plab
