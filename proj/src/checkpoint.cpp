#include "p2plab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace p2plab {

namespace {

constexpr char kMagic[4] = {'P', '2', 'P', 'L'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is) {
    const uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

std::string get_string(std::istream& is) {
    const uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint string too long");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return s;
}

}  // namespace

Model Model::clone_config() const {
    Model m;
    m.arch = arch;
    m.schedule = schedule;
    m.vocab = vocab;
    m.net = std::make_unique<Denoiser>(arch);
    return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    // architecture descriptor
    put_u32(os, static_cast<uint32_t>(model.arch.side));
    put_u32(os, static_cast<uint32_t>(model.arch.base));
    put_u32(os, static_cast<uint32_t>(model.arch.d_text));
    put_u32(os, static_cast<uint32_t>(model.arch.d_time));
    put_u32(os, static_cast<uint32_t>(model.arch.vocab));
    put_u32(os, static_cast<uint32_t>(model.arch.groups));
    put_u32(os, 1);  // attention heads
    // attention-site census
    const auto sites = Denoiser::attention_sites();
    put_u32(os, static_cast<uint32_t>(sites.size()));
    for (const auto& s : sites) {
        put_u32(os, static_cast<uint32_t>(s.index));
        put_u32(os, static_cast<uint32_t>(s.kind));
        put_u32(os, static_cast<uint32_t>(s.res));
    }
    // schedule
    put_u32(os, static_cast<uint32_t>(model.schedule.t_train));
    put_f32(os, model.schedule.beta_start);
    put_f32(os, model.schedule.beta_end);
    put_f32(os, model.final_loss);
    // vocabulary
    put_u32(os, static_cast<uint32_t>(model.vocab.size()));
    for (const auto& w : model.vocab.words()) put_string(os, w);
    // tensors
    const auto& params = model.net->params();
    put_u32(os, static_cast<uint32_t>(params.tensors.size()));
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        put_string(os, params.names[i]);
        const Tensor& t = params.tensors[i];
        put_u32(os, static_cast<uint32_t>(t.rank));
        for (int d = 0; d < t.rank; ++d) put_u32(os, static_cast<uint32_t>(t.dim(d)));
        for (float v : t.data) put_f32(os, v);
    }
    if (!os) throw std::runtime_error("short write: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a model checkpoint (bad magic): " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Model m;
    m.arch.side = static_cast<int>(get_u32(is));
    m.arch.base = static_cast<int>(get_u32(is));
    m.arch.d_text = static_cast<int>(get_u32(is));
    m.arch.d_time = static_cast<int>(get_u32(is));
    m.arch.vocab = static_cast<int>(get_u32(is));
    m.arch.groups = static_cast<int>(get_u32(is));
    const uint32_t heads = get_u32(is);
    if (heads != 1) throw std::runtime_error("unsupported attention head count");
    const uint32_t n_sites = get_u32(is);
    const auto sites = Denoiser::attention_sites();
    if (n_sites != sites.size())
        throw std::runtime_error("attention site census mismatch: checkpoint has " +
                                 std::to_string(n_sites) + " sites, architecture has " +
                                 std::to_string(sites.size()));
    for (const auto& s : sites) {
        AttentionSite got;
        got.index = static_cast<int>(get_u32(is));
        got.kind = static_cast<AttnKind>(get_u32(is));
        got.res = static_cast<int>(get_u32(is));
        if (!(got == s))
            throw std::runtime_error("attention site census mismatch: checkpoint " +
                                     to_string(got) + " vs architecture " + to_string(s));
    }
    const int t_train = static_cast<int>(get_u32(is));
    const float beta_start = get_f32(is);
    const float beta_end = get_f32(is);
    m.schedule = NoiseSchedule::linear(t_train, beta_start, beta_end);
    m.final_loss = get_f32(is);
    const uint32_t n_words = get_u32(is);
    std::vector<std::string> words;
    words.reserve(n_words);
    for (uint32_t i = 0; i < n_words; ++i) words.push_back(get_string(is));
    m.vocab = Vocabulary(std::move(words));
    m.net = std::make_unique<Denoiser>(m.arch);
    auto& params = m.net->params();
    const uint32_t n_tensors = get_u32(is);
    if (n_tensors != params.tensors.size())
        throw std::runtime_error("checkpoint tensor count mismatch");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = get_string(is);
        Tensor& t = params.at(name);
        const uint32_t rank = get_u32(is);
        if (rank != static_cast<uint32_t>(t.rank))
            throw std::runtime_error("tensor rank mismatch for " + name);
        for (uint32_t d = 0; d < rank; ++d) {
            if (get_u32(is) != static_cast<uint32_t>(t.dim(static_cast<int>(d))))
                throw std::runtime_error("tensor shape mismatch for " + name);
        }
        for (float& v : t.data) v = get_f32(is);
    }
    return m;
}

}  // namespace p2plab
