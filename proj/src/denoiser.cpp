#include "p2plab/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace p2plab {

namespace {

constexpr float kGnEps = 1e-5f;

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }
inline float silu_grad(float x) {
    const float s = 1.0f / (1.0f + std::exp(-x));
    return s * (1.0f + x * (1.0f - s));
}

// C(m,n) = A(m,k) B(k,n)
void mm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (!acc) c.zero();
    for (int i = 0; i < m; ++i) {
        const float* arow = &a.data[static_cast<size_t>(i) * k];
        float* crow = &c.data[static_cast<size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            const float* brow = &b.data[static_cast<size_t>(p) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,n) = A(m,k) B(n,k)^T
void mm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (!acc) c.zero();
    for (int i = 0; i < m; ++i) {
        const float* arow = &a.data[static_cast<size_t>(i) * k];
        float* crow = &c.data[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) {
            const float* brow = &b.data[static_cast<size_t>(j) * k];
            float acc_v = crow[j];
            for (int p = 0; p < k; ++p) acc_v += arow[p] * brow[p];
            crow[j] = acc_v;
        }
    }
}

// C(m,n) = A(k,m)^T B(k,n)
void mm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (!acc) c.zero();
    for (int p = 0; p < k; ++p) {
        const float* arow = &a.data[static_cast<size_t>(p) * m];
        const float* brow = &b.data[static_cast<size_t>(p) * n];
        for (int i = 0; i < m; ++i) {
            const float av = arow[i];
            float* crow = &c.data[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void conv3_forward(const Tensor& in, const Tensor& w, const Tensor& b, int stride, Tensor& out) {
    const int ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int co = w.dim(0);
    const int ho = h / stride, wo = wd / stride;
    out.reset({co, ho, wo});
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                float acc = b(o);
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = stride * oy + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        const float* irow = &in.data[(static_cast<size_t>(c) * h + iy) * wd];
                        const float* wrow =
                            &w.data[((static_cast<size_t>(o) * ci + c) * 3 + ky) * 3];
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = stride * ox + kx - 1;
                            if (ix < 0 || ix >= wd) continue;
                            acc += wrow[kx] * irow[ix];
                        }
                    }
                }
                out(o, oy, ox) = acc;
            }
        }
    }
}

void conv3_backward(const Tensor& d_out, const Tensor& in, const Tensor& w, int stride,
                    Tensor& d_in, Tensor& dw, Tensor& db) {
    const int ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int co = d_out.dim(0), ho = d_out.dim(1), wo = d_out.dim(2);
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const float g = d_out(o, oy, ox);
                db(o) += g;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = stride * oy + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = stride * ox + kx - 1;
                            if (ix < 0 || ix >= wd) continue;
                            dw(o, c, ky, kx) += in(c, iy, ix) * g;
                            d_in.data[(static_cast<size_t>(c) * h + iy) * wd + ix] +=
                                w(o, c, ky, kx) * g;
                        }
                    }
                }
            }
        }
    }
}

void gn_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, GnAct& act) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cg = c / groups;
    const int64_t plane = static_cast<int64_t>(h) * w;
    act.xhat.reset({c, h, w});
    act.invstd.reset({groups});
    act.n.reset({c, h, w});
    for (int g = 0; g < groups; ++g) {
        const int64_t begin = static_cast<int64_t>(g) * cg * plane;
        const int64_t count = static_cast<int64_t>(cg) * plane;
        double mean = 0.0;
        for (int64_t i = 0; i < count; ++i) mean += x.data[static_cast<size_t>(begin + i)];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (int64_t i = 0; i < count; ++i) {
            const double d = x.data[static_cast<size_t>(begin + i)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(count);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + kGnEps));
        act.invstd(g) = inv;
        const float mu = static_cast<float>(mean);
        for (int cc = g * cg; cc < (g + 1) * cg; ++cc) {
            const float ga = gamma(cc), be = beta(cc);
            const size_t off = static_cast<size_t>(cc) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const float xh = (x.data[off + static_cast<size_t>(i)] - mu) * inv;
                act.xhat.data[off + static_cast<size_t>(i)] = xh;
                act.n.data[off + static_cast<size_t>(i)] = ga * xh + be;
            }
        }
    }
}

void gn_backward(const Tensor& d_n, const GnAct& act, const Tensor& gamma, int groups,
                 Tensor& dgamma, Tensor& dbeta, Tensor& d_x) {
    const int c = act.xhat.dim(0), h = act.xhat.dim(1), w = act.xhat.dim(2);
    const int cg = c / groups;
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int cc = 0; cc < c; ++cc) {
        const size_t off = static_cast<size_t>(cc) * plane;
        float dg = 0.0f, db = 0.0f;
        for (int64_t i = 0; i < plane; ++i) {
            dg += d_n.data[off + static_cast<size_t>(i)] * act.xhat.data[off + static_cast<size_t>(i)];
            db += d_n.data[off + static_cast<size_t>(i)];
        }
        dgamma(cc) += dg;
        dbeta(cc) += db;
    }
    for (int g = 0; g < groups; ++g) {
        const int64_t begin = static_cast<int64_t>(g) * cg * plane;
        const int64_t count = static_cast<int64_t>(cg) * plane;
        double m1 = 0.0, m2 = 0.0;
        for (int cc = g * cg; cc < (g + 1) * cg; ++cc) {
            const size_t off = static_cast<size_t>(cc) * plane;
            const float ga = gamma(cc);
            for (int64_t i = 0; i < plane; ++i) {
                const float dxh = d_n.data[off + static_cast<size_t>(i)] * ga;
                m1 += dxh;
                m2 += static_cast<double>(dxh) * act.xhat.data[off + static_cast<size_t>(i)];
            }
        }
        m1 /= static_cast<double>(count);
        m2 /= static_cast<double>(count);
        const float inv = act.invstd(g);
        const float fm1 = static_cast<float>(m1), fm2 = static_cast<float>(m2);
        for (int cc = g * cg; cc < (g + 1) * cg; ++cc) {
            const size_t off = static_cast<size_t>(cc) * plane;
            const float ga = gamma(cc);
            for (int64_t i = 0; i < plane; ++i) {
                const float dxh = d_n.data[off + static_cast<size_t>(i)] * ga;
                d_x.data[off + static_cast<size_t>(i)] +=
                    inv * (dxh - fm1 - act.xhat.data[off + static_cast<size_t>(i)] * fm2);
            }
        }
        (void)begin;
    }
}

void upsample2(const Tensor& in, Tensor& out) {
    const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
    out.reset({c, 2 * h, 2 * w});
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x) out(cc, y, x) = in(cc, y / 2, x / 2);
}

void upsample2_backward(const Tensor& d_out, Tensor& d_in) {
    const int c = d_in.dim(0), h = d_in.dim(1), w = d_in.dim(2);
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x) d_in(cc, y / 2, x / 2) += d_out(cc, y, x);
}

void linear_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tensor& y) {
    const int out = w.dim(0), in = w.dim(1);
    y.reset({out});
    for (int i = 0; i < out; ++i) {
        float acc = b(i);
        const float* wrow = &w.data[static_cast<size_t>(i) * in];
        for (int j = 0; j < in; ++j) acc += wrow[j] * x(j);
        y(i) = acc;
    }
}

void linear_backward(const Tensor& d_y, const Tensor& w, const Tensor& x, Tensor& dw, Tensor& db,
                     Tensor& d_x) {
    const int out = w.dim(0), in = w.dim(1);
    for (int i = 0; i < out; ++i) {
        const float g = d_y(i);
        db(i) += g;
        const float* wrow = &w.data[static_cast<size_t>(i) * in];
        float* dwrow = &dw.data[static_cast<size_t>(i) * in];
        for (int j = 0; j < in; ++j) {
            dwrow[j] += g * x(j);
            d_x(j) += g * wrow[j];
        }
    }
}

void row_softmax(Tensor& m) {
    const int rows = m.dim(0), cols = m.dim(1);
    for (int i = 0; i < rows; ++i) {
        float* row = &m.data[static_cast<size_t>(i) * cols];
        float mx = row[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        float sum = 0.0f;
        for (int j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < cols; ++j) row[j] *= inv;
    }
}

// Shared application path: override selection, column reweighting, product.
void attn_apply(const Tensor& m, const Tensor& v, const ReweightVector* reweight,
                const Tensor* m_ovr, const Tensor* v_ovr, const AttentionSite* site, Tensor& out,
                Tensor& scratch) {
    const Tensor* m_eff = m_ovr ? m_ovr : &m;
    const Tensor* v_eff = v_ovr ? v_ovr : &v;
    const std::string where = site ? " at " + to_string(*site) : "";
    if (m_ovr && !m_ovr->same_shape(m))
        throw std::runtime_error("attention map override shape mismatch" + where);
    if (v_ovr && !v_ovr->same_shape(v))
        throw std::runtime_error("attention value override shape mismatch" + where);
    if (m_eff->dim(1) != v_eff->dim(0))
        throw std::runtime_error("attention map/value inner dimension mismatch" + where);
    if (reweight) {
        if (m_eff->dim(1) != kTokenLen)
            throw std::runtime_error("reweight vector applied to non-token attention" + where);
        scratch = *m_eff;
        const int rows = scratch.dim(0), cols = scratch.dim(1);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                scratch(i, j) *= (*reweight)[static_cast<size_t>(j)];
        m_eff = &scratch;
    }
    out.reset({m_eff->dim(0), v_eff->dim(1)});
    mm_nn(*m_eff, *v_eff, out, false);
}

}  // namespace

std::string to_string(const AttentionSite& site) {
    return std::string(site.kind == AttnKind::cross ? "cross" : "self") + "@" +
           std::to_string(site.res) + "#" + std::to_string(site.index);
}

const TapeEntry& AttentionTape::at(int step, const AttentionSite& site) const {
    for (const auto& e : entries)
        if (e.step == step && e.site == site) return e;
    throw std::runtime_error("tape entry missing: step " + std::to_string(step) + " " +
                             to_string(site));
}

void AttentionTape::check_rows_normalized(float tol) const {
    for (const auto& e : entries) {
        const int rows = e.map.dim(0), cols = e.map.dim(1);
        for (int i = 0; i < rows; ++i) {
            float sum = 0.0f;
            for (int j = 0; j < cols; ++j) sum += e.map(i, j);
            if (std::abs(sum - 1.0f) > tol)
                throw std::runtime_error("attention row not normalized at " + to_string(e.site) +
                                         " step " + std::to_string(e.step));
        }
    }
}

AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const ReweightVector* reweight, const Tensor* map_override,
                          const Tensor* v_override) {
    if (q.dim(1) != k.dim(1)) throw std::runtime_error("attention: q/k dimension mismatch");
    if (k.dim(0) != v.dim(0)) throw std::runtime_error("attention: k/v row mismatch");
    AttentionOutput r;
    r.raw_map.reset({q.dim(0), k.dim(0)});
    mm_nt(q, k, r.raw_map, false);
    scale_inplace(r.raw_map, 1.0f / std::sqrt(static_cast<float>(q.dim(1))));
    row_softmax(r.raw_map);
    Tensor scratch;
    attn_apply(r.raw_map, v, reweight, map_override, v_override, nullptr, r.out, scratch);
    return r;
}

Tensor& ParamSet::add(const std::string& name, std::initializer_list<int> dims) {
    if (index.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    index[name] = static_cast<int>(tensors.size());
    names.push_back(name);
    tensors.emplace_back(dims);
    return tensors.back();
}

int ParamSet::idx(const std::string& name) const {
    const auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
}

int64_t ParamSet::total_size() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

std::vector<Tensor> ParamSet::zeros_like() const {
    std::vector<Tensor> out;
    out.reserve(tensors.size());
    for (const auto& t : tensors) {
        Tensor z;
        z.dims = t.dims;
        z.rank = t.rank;
        z.data.assign(t.data.size(), 0.0f);
        out.push_back(std::move(z));
    }
    return out;
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    if (cfg.side != 32) throw std::runtime_error("denoiser: side must be 32");
    if (cfg.base < 4 || cfg.base % cfg.groups != 0)
        throw std::runtime_error("denoiser: base must be >= 4 and divisible by groups");
    const int c0 = cfg.c0(), c1 = cfg.c1(), c2 = cfg.c2();
    params_.add("text.table", {cfg.vocab, cfg.d_text});
    params_.add("time.w1", {cfg.d_time, cfg.d_time});
    params_.add("time.b1", {cfg.d_time});
    params_.add("time.w2", {cfg.d_time, cfg.d_time});
    params_.add("time.b2", {cfg.d_time});
    params_.add("conv_in.w", {c0, 3, 3, 3});
    params_.add("conv_in.b", {c0});
    const int rb_ch[6] = {c0, c1, c2, c2, c1, c0};
    for (int i = 0; i < 6; ++i) {
        const std::string p = "rb" + std::to_string(i);
        const int c = rb_ch[i];
        params_.add(p + ".gn.g", {c});
        params_.add(p + ".gn.b", {c});
        params_.add(p + ".conv.w", {c, c, 3, 3});
        params_.add(p + ".conv.b", {c});
        params_.add(p + ".time.w", {c, cfg.d_time});
        params_.add(p + ".time.b", {c});
    }
    params_.add("down0.w", {c1, c0, 3, 3});
    params_.add("down0.b", {c1});
    params_.add("down1.w", {c2, c1, 3, 3});
    params_.add("down1.b", {c2});
    params_.add("ca16.gn.g", {c1});
    params_.add("ca16.gn.b", {c1});
    params_.add("ca16.wq", {c1, c1});
    params_.add("ca16.wk", {cfg.d_text, c1});
    params_.add("ca16.wv", {cfg.d_text, c1});
    params_.add("ca16.wo", {c1, c1});
    params_.add("sa8.gn.g", {c2});
    params_.add("sa8.gn.b", {c2});
    params_.add("sa8.wq", {c2, c2});
    params_.add("sa8.wk", {c2, c2});
    params_.add("sa8.wv", {c2, c2});
    params_.add("sa8.wo", {c2, c2});
    params_.add("ca8.gn.g", {c2});
    params_.add("ca8.gn.b", {c2});
    params_.add("ca8.wq", {c2, c2});
    params_.add("ca8.wk", {cfg.d_text, c2});
    params_.add("ca8.wv", {cfg.d_text, c2});
    params_.add("ca8.wo", {c2, c2});
    params_.add("up1.w", {c1, c2, 3, 3});
    params_.add("up1.b", {c1});
    params_.add("up0.w", {c0, c1, 3, 3});
    params_.add("up0.b", {c0});
    params_.add("out.gn.g", {c0});
    params_.add("out.gn.b", {c0});
    params_.add("out.conv.w", {3, c0, 3, 3});
    params_.add("out.conv.b", {3});
}

void Denoiser::init_weights(uint64_t seed) {
    RandomStream rng(seed, Stream::weight_init);
    auto fill_normal = [&rng](Tensor& t, float sigma) {
        for (float& v : t.data) v = sigma * rng.next_normal();
    };
    for (size_t i = 0; i < params_.tensors.size(); ++i) {
        const std::string& name = params_.names[i];
        Tensor& t = params_.tensors[i];
        if (name.ends_with(".gn.g")) {
            t.fill(1.0f);
        } else if (name.ends_with(".gn.b") || name.ends_with(".b") || name.ends_with(".b1") ||
                   name.ends_with(".b2")) {
            t.zero();
        } else if (name == "out.conv.w" || name.ends_with(".wo")) {
            t.zero();
        } else if (name.ends_with("conv.w") || name.starts_with("down") ||
                   name.starts_with("up") || name == "conv_in.w") {
            fill_normal(t, std::sqrt(2.0f / (static_cast<float>(t.dim(1)) * 9.0f)));
        } else if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv")) {
            fill_normal(t, std::sqrt(1.0f / static_cast<float>(t.dim(0))));
        } else if (name.ends_with(".time.w")) {
            fill_normal(t, std::sqrt(1.0f / static_cast<float>(cfg_.d_time)));
        } else if (name == "time.w1" || name == "time.w2") {
            fill_normal(t, std::sqrt(2.0f / static_cast<float>(cfg_.d_time)));
        } else if (name == "text.table") {
            fill_normal(t, 0.5f);
        } else {
            throw std::runtime_error("no init rule for parameter: " + name);
        }
    }
}

std::vector<AttentionSite> Denoiser::attention_sites() {
    return {{0, AttnKind::cross, 16}, {1, AttnKind::self_attn, 8}, {2, AttnKind::cross, 8}};
}

namespace {

void flatten_pixels(const Tensor& x, Tensor& out) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    out.reset({h * w, c});
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(y * w + xx, cc) = x(cc, y, xx);
}

void unflatten_add(const Tensor& flat, Tensor& x) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) x(cc, y, xx) += flat(y * w + xx, cc);
}

}  // namespace

const Tensor& Denoiser::forward(const Tensor& x, int t, const Tensor& ctx_emb,
                                AttentionHookCtx* hooks, DenoiserPass& pass) const {
    const auto& P = params_;
    const int groups = cfg_.groups;
    pass.x = x;
    pass.ctx = ctx_emb;
    pass.t = t;
    pass.hooked = hooks != nullptr && hooks->controller != nullptr;

    // time embedding
    pass.basis.reset({cfg_.d_time});
    for (int i = 0; i < cfg_.d_time; ++i) pass.basis(i) = position_code(t, i, cfg_.d_time);
    linear_forward(P.at("time.w1"), P.at("time.b1"), pass.basis, pass.t1p);
    pass.t1.reset({cfg_.d_time});
    for (int i = 0; i < cfg_.d_time; ++i) pass.t1(i) = silu(pass.t1p(i));
    linear_forward(P.at("time.w2"), P.at("time.b2"), pass.t1, pass.temb);
    pass.tact.reset({cfg_.d_time});
    for (int i = 0; i < cfg_.d_time; ++i) pass.tact(i) = silu(pass.temb(i));

    auto resblock = [&](int i, const Tensor& in, Tensor& out) {
        const std::string p = "rb" + std::to_string(i);
        ResAct& act = pass.rb[i];
        gn_forward(in, P.at(p + ".gn.g"), P.at(p + ".gn.b"), groups, act.gn);
        act.a = act.gn.n;
        for (float& v : act.a.data) v = silu(v);
        conv3_forward(act.a, P.at(p + ".conv.w"), P.at(p + ".conv.b"), 1, act.h);
        Tensor tb;
        linear_forward(P.at(p + ".time.w"), P.at(p + ".time.b"), pass.tact, tb);
        const int c = act.h.dim(0);
        const int64_t plane = static_cast<int64_t>(act.h.dim(1)) * act.h.dim(2);
        for (int cc = 0; cc < c; ++cc) {
            const float bias = tb(cc);
            float* row = &act.h.data[static_cast<size_t>(cc) * plane];
            for (int64_t j = 0; j < plane; ++j) row[j] += bias;
        }
        out = in;
        add_inplace(out, act.h);
    };

    auto attn_block = [&](const char* prefix, const AttentionSite& site, const Tensor& in,
                          AttnAct& act, Tensor& out) {
        const std::string p = prefix;
        gn_forward(in, P.at(p + ".gn.g"), P.at(p + ".gn.b"), groups, act.gn);
        flatten_pixels(act.gn.n, act.xn);
        const Tensor& wq = P.at(p + ".wq");
        const Tensor& wk = P.at(p + ".wk");
        const Tensor& wv = P.at(p + ".wv");
        act.q.reset({act.xn.dim(0), wq.dim(1)});
        mm_nn(act.xn, wq, act.q, false);
        const Tensor& kv_src = site.kind == AttnKind::cross ? pass.ctx : act.xn;
        act.k.reset({kv_src.dim(0), wk.dim(1)});
        mm_nn(kv_src, wk, act.k, false);
        act.v.reset({kv_src.dim(0), wv.dim(1)});
        mm_nn(kv_src, wv, act.v, false);
        act.m.reset({act.q.dim(0), act.k.dim(0)});
        mm_nt(act.q, act.k, act.m, false);
        scale_inplace(act.m, 1.0f / std::sqrt(static_cast<float>(act.q.dim(1))));
        row_softmax(act.m);
        AttnOverride ovr;
        if (hooks) {
            if (hooks->tape) {
                TapeEntry e;
                e.step = hooks->step;
                e.site = site;
                e.map = act.m;
                e.values = act.v;
                hooks->tape->entries.push_back(std::move(e));
            }
            if (hooks->controller)
                ovr = hooks->controller->intercept(site, hooks->step, act.m, act.v);
        }
        if (ovr.reweight && site.kind != AttnKind::cross)
            throw std::runtime_error("reweight override on self-attention " + to_string(site));
        Tensor scratch;
        attn_apply(act.m, act.v, ovr.reweight, ovr.map, ovr.values, &site, act.o, scratch);
        Tensor y({act.o.dim(0), P.at(p + ".wo").dim(1)});
        mm_nn(act.o, P.at(p + ".wo"), y, false);
        out = in;
        unflatten_add(y, out);
    };

    const auto sites = attention_sites();
    conv3_forward(x, P.at("conv_in.w"), P.at("conv_in.b"), 1, pass.h_in);
    resblock(0, pass.h_in, pass.e0);
    conv3_forward(pass.e0, P.at("down0.w"), P.at("down0.b"), 2, pass.h1);
    resblock(1, pass.h1, pass.e1);
    attn_block("ca16", sites[0], pass.e1, pass.at16, pass.a1);
    conv3_forward(pass.a1, P.at("down1.w"), P.at("down1.b"), 2, pass.h2);
    resblock(2, pass.h2, pass.m0);
    attn_block("sa8", sites[1], pass.m0, pass.at8s, pass.m1);
    attn_block("ca8", sites[2], pass.m1, pass.at8c, pass.m2);
    resblock(3, pass.m2, pass.m3);
    upsample2(pass.m3, pass.mu);
    conv3_forward(pass.mu, P.at("up1.w"), P.at("up1.b"), 1, pass.u1);
    pass.s1 = pass.u1;
    add_inplace(pass.s1, pass.a1);
    resblock(4, pass.s1, pass.d1);
    upsample2(pass.d1, pass.du);
    conv3_forward(pass.du, P.at("up0.w"), P.at("up0.b"), 1, pass.u0);
    pass.s0 = pass.u0;
    add_inplace(pass.s0, pass.e0);
    resblock(5, pass.s0, pass.d0);
    gn_forward(pass.d0, P.at("out.gn.g"), P.at("out.gn.b"), groups, pass.out_gn);
    pass.out_a = pass.out_gn.n;
    for (float& v : pass.out_a.data) v = silu(v);
    conv3_forward(pass.out_a, P.at("out.conv.w"), P.at("out.conv.b"), 1, pass.eps);
    return pass.eps;
}

void Denoiser::backward(const Tensor& d_eps, const DenoiserPass& pass, std::vector<Tensor>& grads,
                        Tensor& d_ctx) const {
    if (pass.hooked)
        throw std::runtime_error("backward on a hooked forward pass is not supported");
    const auto& P = params_;
    const int groups = cfg_.groups;
    auto G = [&](const std::string& name) -> Tensor& {
        return grads[static_cast<size_t>(P.idx(name))];
    };

    Tensor d_tact({cfg_.d_time});

    auto resblock_bwd = [&](int i, const Tensor& in, const Tensor& d_out, Tensor& d_in) {
        const std::string p = "rb" + std::to_string(i);
        const ResAct& act = pass.rb[i];
        // residual branch
        add_inplace(d_in, d_out);
        // time bias
        Tensor d_tb({act.h.dim(0)});
        const int c = act.h.dim(0);
        const int64_t plane = static_cast<int64_t>(act.h.dim(1)) * act.h.dim(2);
        for (int cc = 0; cc < c; ++cc) {
            float acc = 0.0f;
            const float* row = &d_out.data[static_cast<size_t>(cc) * plane];
            for (int64_t j = 0; j < plane; ++j) acc += row[j];
            d_tb(cc) = acc;
        }
        linear_backward(d_tb, P.at(p + ".time.w"), pass.tact, G(p + ".time.w"), G(p + ".time.b"),
                        d_tact);
        // conv
        Tensor d_a;
        d_a.dims = act.a.dims;
        d_a.rank = act.a.rank;
        d_a.data.assign(act.a.data.size(), 0.0f);
        conv3_backward(d_out, act.a, P.at(p + ".conv.w"), 1, d_a, G(p + ".conv.w"),
                       G(p + ".conv.b"));
        // silu
        for (size_t j = 0; j < d_a.data.size(); ++j) d_a.data[j] *= silu_grad(act.gn.n.data[j]);
        gn_backward(d_a, act.gn, P.at(p + ".gn.g"), groups, G(p + ".gn.g"), G(p + ".gn.b"), d_in);
        (void)in;
    };

    auto attn_bwd = [&](const char* prefix, const AttentionSite& site, const Tensor& in,
                        const AttnAct& act, const Tensor& d_out, Tensor& d_in) {
        const std::string p = prefix;
        add_inplace(d_in, d_out);
        Tensor dy;
        flatten_pixels(d_out, dy);  // (N, C)
        // output projection
        mm_tn(act.o, dy, G(p + ".wo"), true);
        Tensor d_o({act.o.dim(0), act.o.dim(1)});
        mm_nt(dy, P.at(p + ".wo"), d_o, false);
        // product
        Tensor d_m({act.m.dim(0), act.m.dim(1)});
        mm_nt(d_o, act.v, d_m, false);
        Tensor d_v({act.v.dim(0), act.v.dim(1)});
        mm_tn(act.m, d_o, d_v, false);
        // softmax rows
        const int rows = act.m.dim(0), cols = act.m.dim(1);
        Tensor d_s({rows, cols});
        for (int r = 0; r < rows; ++r) {
            const float* mrow = &act.m.data[static_cast<size_t>(r) * cols];
            const float* grow = &d_m.data[static_cast<size_t>(r) * cols];
            float dot = 0.0f;
            for (int j = 0; j < cols; ++j) dot += mrow[j] * grow[j];
            float* srow = &d_s.data[static_cast<size_t>(r) * cols];
            for (int j = 0; j < cols; ++j) srow[j] = mrow[j] * (grow[j] - dot);
        }
        const float scale = 1.0f / std::sqrt(static_cast<float>(act.q.dim(1)));
        Tensor d_q({act.q.dim(0), act.q.dim(1)});
        mm_nn(d_s, act.k, d_q, false);
        scale_inplace(d_q, scale);
        Tensor d_k({act.k.dim(0), act.k.dim(1)});
        mm_tn(d_s, act.q, d_k, false);
        scale_inplace(d_k, scale);
        // projections
        Tensor d_xn({act.xn.dim(0), act.xn.dim(1)});
        mm_tn(act.xn, d_q, G(p + ".wq"), true);
        mm_nt(d_q, P.at(p + ".wq"), d_xn, false);
        if (site.kind == AttnKind::cross) {
            mm_tn(pass.ctx, d_k, G(p + ".wk"), true);
            mm_tn(pass.ctx, d_v, G(p + ".wv"), true);
            mm_nt(d_k, P.at(p + ".wk"), d_ctx, true);
            mm_nt(d_v, P.at(p + ".wv"), d_ctx, true);
        } else {
            mm_tn(act.xn, d_k, G(p + ".wk"), true);
            mm_tn(act.xn, d_v, G(p + ".wv"), true);
            mm_nt(d_k, P.at(p + ".wk"), d_xn, true);
            mm_nt(d_v, P.at(p + ".wv"), d_xn, true);
        }
        // back through flatten and groupnorm
        Tensor d_n;
        d_n.dims = in.dims;
        d_n.rank = in.rank;
        d_n.data.assign(in.data.size(), 0.0f);
        const int cch = in.dim(0), h = in.dim(1), w = in.dim(2);
        for (int cc = 0; cc < cch; ++cc)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) d_n(cc, y, xx) = d_xn(y * w + xx, cc);
        gn_backward(d_n, act.gn, P.at(p + ".gn.g"), groups, G(p + ".gn.g"), G(p + ".gn.b"), d_in);
    };

    auto zeros_like_t = [](const Tensor& t) {
        Tensor z;
        z.dims = t.dims;
        z.rank = t.rank;
        z.data.assign(t.data.size(), 0.0f);
        return z;
    };

    // out block
    Tensor d_oa = zeros_like_t(pass.out_a);
    conv3_backward(d_eps, pass.out_a, P.at("out.conv.w"), 1, d_oa, G("out.conv.w"),
                   G("out.conv.b"));
    for (size_t j = 0; j < d_oa.data.size(); ++j) d_oa.data[j] *= silu_grad(pass.out_gn.n.data[j]);
    Tensor d_d0 = zeros_like_t(pass.d0);
    gn_backward(d_oa, pass.out_gn, P.at("out.gn.g"), groups, G("out.gn.g"), G("out.gn.b"), d_d0);

    Tensor d_s0 = zeros_like_t(pass.s0);
    resblock_bwd(5, pass.s0, d_d0, d_s0);
    Tensor d_e0 = zeros_like_t(pass.e0);
    add_inplace(d_e0, d_s0);  // skip branch
    Tensor d_du = zeros_like_t(pass.du);
    conv3_backward(d_s0, pass.du, P.at("up0.w"), 1, d_du, G("up0.w"), G("up0.b"));
    Tensor d_d1 = zeros_like_t(pass.d1);
    upsample2_backward(d_du, d_d1);

    Tensor d_s1 = zeros_like_t(pass.s1);
    resblock_bwd(4, pass.s1, d_d1, d_s1);
    Tensor d_a1 = zeros_like_t(pass.a1);
    add_inplace(d_a1, d_s1);  // skip branch
    Tensor d_mu = zeros_like_t(pass.mu);
    conv3_backward(d_s1, pass.mu, P.at("up1.w"), 1, d_mu, G("up1.w"), G("up1.b"));
    Tensor d_m3 = zeros_like_t(pass.m3);
    upsample2_backward(d_mu, d_m3);

    Tensor d_m2 = zeros_like_t(pass.m2);
    resblock_bwd(3, pass.m2, d_m3, d_m2);
    const auto sites = attention_sites();
    Tensor d_m1 = zeros_like_t(pass.m1);
    attn_bwd("ca8", sites[2], pass.m1, pass.at8c, d_m2, d_m1);
    Tensor d_m0 = zeros_like_t(pass.m0);
    attn_bwd("sa8", sites[1], pass.m0, pass.at8s, d_m1, d_m0);
    Tensor d_h2 = zeros_like_t(pass.h2);
    resblock_bwd(2, pass.h2, d_m0, d_h2);
    conv3_backward(d_h2, pass.a1, P.at("down1.w"), 2, d_a1, G("down1.w"), G("down1.b"));

    Tensor d_e1 = zeros_like_t(pass.e1);
    attn_bwd("ca16", sites[0], pass.e1, pass.at16, d_a1, d_e1);
    Tensor d_h1 = zeros_like_t(pass.h1);
    resblock_bwd(1, pass.h1, d_e1, d_h1);
    conv3_backward(d_h1, pass.e0, P.at("down0.w"), 2, d_e0, G("down0.w"), G("down0.b"));

    Tensor d_h_in = zeros_like_t(pass.h_in);
    resblock_bwd(0, pass.h_in, d_e0, d_h_in);
    Tensor d_x = zeros_like_t(pass.x);
    conv3_backward(d_h_in, pass.x, P.at("conv_in.w"), 1, d_x, G("conv_in.w"), G("conv_in.b"));

    // time MLP
    Tensor d_temb({cfg_.d_time});
    for (int i = 0; i < cfg_.d_time; ++i) d_temb(i) = d_tact(i) * silu_grad(pass.temb(i));
    Tensor d_t1({cfg_.d_time});
    linear_backward(d_temb, P.at("time.w2"), pass.t1, G("time.w2"), G("time.b2"), d_t1);
    Tensor d_t1p({cfg_.d_time});
    for (int i = 0; i < cfg_.d_time; ++i) d_t1p(i) = d_t1(i) * silu_grad(pass.t1p(i));
    Tensor d_basis({cfg_.d_time});
    linear_backward(d_t1p, P.at("time.w1"), pass.basis, G("time.w1"), G("time.b1"), d_basis);
}

}  // namespace p2plab
