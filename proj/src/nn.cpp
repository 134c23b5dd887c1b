#include "uvga/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "uvga/rng.hpp"
#include "uvga/serialize.hpp"

namespace uvga {

Tensor& ParamStore::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("missing parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("missing parameter: " + name);
    return it->second;
}

namespace {

[[noreturn]] void bad_net(const LayerSpec& l, const std::string& msg) {
    throw std::invalid_argument("layer '" + l.name + "': " + msg);
}

struct Shape {
    int c, h, w;
};

Shape layer_output_shape(const LayerSpec& l, Shape in,
                         const std::map<std::string, Shape>& saved) {
    switch (l.kind) {
        case LayerKind::conv3x3:
        case LayerKind::conv1x1:
            if (in.c != l.in_ch) bad_net(l, "input channels " + std::to_string(in.c));
            return {l.out_ch, in.h, in.w};
        case LayerKind::transposed_conv4x4_stride2:
            if (in.c != l.in_ch) bad_net(l, "input channels " + std::to_string(in.c));
            return {l.out_ch, in.h * 2, in.w * 2};
        case LayerKind::linear:
            if (in.c != l.in_ch || in.h != 1 || in.w != 1) bad_net(l, "expects a vector input");
            return {l.out_ch, 1, 1};
        case LayerKind::rms_norm:
        case LayerKind::silu:
        case LayerKind::film:
            return in;
        case LayerKind::cross_attention:
            if (in.c != l.in_ch) bad_net(l, "input channels " + std::to_string(in.c));
            if (l.in_ch % std::max(1, l.heads) != 0) bad_net(l, "heads must divide width");
            return in;
        case LayerKind::nearest_upsample2x:
            return {in.c, in.h * 2, in.w * 2};
        case LayerKind::avgpool2x:
            if (in.h % 2 != 0 || in.w % 2 != 0) bad_net(l, "spatial dims must be even");
            return {in.c, in.h / 2, in.w / 2};
        case LayerKind::add_skip: {
            auto it = saved.find(l.skip_from);
            if (it == saved.end()) bad_net(l, "unknown skip source '" + l.skip_from + "'");
            const Shape& s = it->second;
            if (s.c != in.c || s.h != in.h || s.w != in.w) bad_net(l, "skip shape mismatch");
            return in;
        }
    }
    bad_net(l, "unknown kind");
}

void he_fill(Tensor& t, int fan_in, CounterRng& rng) {
    float std_dev = std::sqrt(2.f / float(std::max(1, fan_in)));
    for (auto& v : t.data) v = rng.next_normal() * std_dev;
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const LayerSpec& l) {
    if (!t.all_finite()) throw std::runtime_error("non-finite output at layer '" + l.name + "'");
}
#else
void debug_check_finite(const Tensor&, const LayerSpec&) {}
#endif

// ---- conv3x3, stride 1, zero pad 1 -----------------------------------

void conv3x3_fwd(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int H = in.h, W = in.w, IC = in.c, OC = out.c;
    for (int oc = 0; oc < OC; ++oc) {
        float* op = out.plane(oc);
        float bias = b[size_t(oc)];
        for (int i = 0; i < H * W; ++i) op[i] = bias;
        for (int ic = 0; ic < IC; ++ic) {
            const float* ip = in.plane(ic);
            const float* wp = &w.data[(size_t(oc) * IC + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    float wv = wp[ky * 3 + kx];
                    if (wv == 0.f) continue;
                    int dy = ky - 1, dx = kx - 1;
                    int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int y = y0; y < y1; ++y) {
                        float* orow = op + size_t(y) * W;
                        const float* irow = ip + size_t(y + dy) * W + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

void conv3x3_bwd(const Tensor& in, const Tensor& w, const Tensor& g, Tensor& d_in, Tensor& d_w,
                 Tensor& d_b) {
    const int H = in.h, W = in.w, IC = in.c, OC = g.c;
    for (int oc = 0; oc < OC; ++oc) {
        const float* gp = g.plane(oc);
        double bsum = 0;
        for (int i = 0; i < H * W; ++i) bsum += gp[i];
        d_b[size_t(oc)] += float(bsum);
        for (int ic = 0; ic < IC; ++ic) {
            const float* ip = in.plane(ic);
            float* dip = d_in.plane(ic);
            float* dwp = &d_w.data[(size_t(oc) * IC + ic) * 9];
            const float* wp = &w.data[(size_t(oc) * IC + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    int dy = ky - 1, dx = kx - 1;
                    int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    float wv = wp[ky * 3 + kx];
                    float wacc = 0.f;
                    for (int y = y0; y < y1; ++y) {
                        const float* grow = gp + size_t(y) * W;
                        const float* irow = ip + size_t(y + dy) * W + dx;
                        float* drow = dip + size_t(y + dy) * W + dx;
                        for (int x = x0; x < x1; ++x) {
                            wacc += irow[x] * grow[x];
                            drow[x] += wv * grow[x];
                        }
                    }
                    dwp[ky * 3 + kx] += wacc;
                }
            }
        }
    }
}

// ---- conv1x1 ----------------------------------------------------------

void conv1x1_fwd(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int HW = in.h * in.w, IC = in.c, OC = out.c;
    for (int oc = 0; oc < OC; ++oc) {
        float* op = out.plane(oc);
        float bias = b[size_t(oc)];
        for (int i = 0; i < HW; ++i) op[i] = bias;
        for (int ic = 0; ic < IC; ++ic) {
            float wv = w.at2(oc, ic);
            const float* ip = in.plane(ic);
            for (int i = 0; i < HW; ++i) op[i] += wv * ip[i];
        }
    }
}

void conv1x1_bwd(const Tensor& in, const Tensor& w, const Tensor& g, Tensor& d_in, Tensor& d_w,
                 Tensor& d_b) {
    const int HW = in.h * in.w, IC = in.c, OC = g.c;
    for (int oc = 0; oc < OC; ++oc) {
        const float* gp = g.plane(oc);
        double bsum = 0;
        for (int i = 0; i < HW; ++i) bsum += gp[i];
        d_b[size_t(oc)] += float(bsum);
        for (int ic = 0; ic < IC; ++ic) {
            const float* ip = in.plane(ic);
            float* dip = d_in.plane(ic);
            float wv = w.at2(oc, ic);
            float wacc = 0.f;
            for (int i = 0; i < HW; ++i) {
                wacc += ip[i] * gp[i];
                dip[i] += wv * gp[i];
            }
            d_w.at2(oc, ic) += wacc;
        }
    }
}

// ---- transposed conv 4x4, stride 2, pad 1 (exact 2x upsampling) --------

void tconv_fwd(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int IH = in.h, IW = in.w, IC = in.c, OC = out.c;
    const int OH = out.h, OW = out.w;
    for (int oc = 0; oc < OC; ++oc) {
        float* op = out.plane(oc);
        float bias = b[size_t(oc)];
        for (int i = 0; i < OH * OW; ++i) op[i] = bias;
    }
    for (int ic = 0; ic < IC; ++ic) {
        const float* ip = in.plane(ic);
        for (int oc = 0; oc < OC; ++oc) {
            const float* wp = &w.data[(size_t(ic) * OC + oc) * 16];
            float* op = out.plane(oc);
            for (int iy = 0; iy < IH; ++iy) {
                for (int ix = 0; ix < IW; ++ix) {
                    float v = ip[size_t(iy) * IW + ix];
                    if (v == 0.f) continue;
                    for (int ky = 0; ky < 4; ++ky) {
                        int oy = 2 * iy + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        for (int kx = 0; kx < 4; ++kx) {
                            int ox = 2 * ix + kx - 1;
                            if (ox < 0 || ox >= OW) continue;
                            op[size_t(oy) * OW + ox] += v * wp[ky * 4 + kx];
                        }
                    }
                }
            }
        }
    }
}

void tconv_bwd(const Tensor& in, const Tensor& w, const Tensor& g, Tensor& d_in, Tensor& d_w,
               Tensor& d_b) {
    const int IH = in.h, IW = in.w, IC = in.c, OC = g.c;
    const int OH = g.h, OW = g.w;
    for (int oc = 0; oc < OC; ++oc) {
        const float* gp = g.plane(oc);
        double bsum = 0;
        for (int i = 0; i < OH * OW; ++i) bsum += gp[i];
        d_b[size_t(oc)] += float(bsum);
    }
    for (int ic = 0; ic < IC; ++ic) {
        const float* ip = in.plane(ic);
        float* dip = d_in.plane(ic);
        for (int oc = 0; oc < OC; ++oc) {
            const float* wp = &w.data[(size_t(ic) * OC + oc) * 16];
            float* dwp = &d_w.data[(size_t(ic) * OC + oc) * 16];
            const float* gp = g.plane(oc);
            for (int iy = 0; iy < IH; ++iy) {
                for (int ix = 0; ix < IW; ++ix) {
                    float v = ip[size_t(iy) * IW + ix];
                    float dacc = 0.f;
                    for (int ky = 0; ky < 4; ++ky) {
                        int oy = 2 * iy + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        for (int kx = 0; kx < 4; ++kx) {
                            int ox = 2 * ix + kx - 1;
                            if (ox < 0 || ox >= OW) continue;
                            float gv = gp[size_t(oy) * OW + ox];
                            dacc += wp[ky * 4 + kx] * gv;
                            dwp[ky * 4 + kx] += v * gv;
                        }
                    }
                    dip[size_t(iy) * IW + ix] += dacc;
                }
            }
        }
    }
}

// ---- misc layers -------------------------------------------------------

constexpr float kRmsEps = 1e-6f;

void rms_norm_fwd(const Tensor& in, const Tensor& gain, Tensor& out) {
    const int C = in.c, HW = in.h * in.w;
    for (int i = 0; i < HW; ++i) {
        float ss = 0.f;
        for (int c = 0; c < C; ++c) {
            float v = in.data[size_t(c) * HW + i];
            ss += v * v;
        }
        float inv = 1.f / std::sqrt(ss / float(C) + kRmsEps);
        for (int c = 0; c < C; ++c)
            out.data[size_t(c) * HW + i] = in.data[size_t(c) * HW + i] * inv * gain[size_t(c)];
    }
}

void rms_norm_bwd(const Tensor& in, const Tensor& gain, const Tensor& g, Tensor& d_in,
                  Tensor& d_gain) {
    const int C = in.c, HW = in.h * in.w;
    for (int i = 0; i < HW; ++i) {
        float ss = 0.f;
        for (int c = 0; c < C; ++c) {
            float v = in.data[size_t(c) * HW + i];
            ss += v * v;
        }
        float r2 = ss / float(C) + kRmsEps;
        float inv = 1.f / std::sqrt(r2);
        float dot_gx = 0.f;
        for (int c = 0; c < C; ++c)
            dot_gx += g.data[size_t(c) * HW + i] * gain[size_t(c)] * in.data[size_t(c) * HW + i];
        for (int c = 0; c < C; ++c) {
            float x = in.data[size_t(c) * HW + i];
            float gv = g.data[size_t(c) * HW + i];
            d_gain[size_t(c)] += gv * x * inv;
            d_in.data[size_t(c) * HW + i] +=
                gain[size_t(c)] * gv * inv - x * dot_gx * inv / (r2 * float(C));
        }
    }
}

void silu_fwd(const Tensor& in, Tensor& out) {
    for (size_t i = 0; i < in.size(); ++i) {
        float x = in.data[i];
        out.data[i] = x / (1.f + std::exp(-x));
    }
}

void silu_bwd(const Tensor& in, const Tensor& g, Tensor& d_in) {
    for (size_t i = 0; i < in.size(); ++i) {
        float x = in.data[i];
        float s = 1.f / (1.f + std::exp(-x));
        d_in.data[i] += g.data[i] * s * (1.f + x * (1.f - s));
    }
}

// film: y = x * (1 + scale_c) + shift_c, [scale; shift] = W e + b.
void film_scale_shift(const Tensor& w, const Tensor& b, const Tensor& emb, int C,
                      std::vector<float>& scale, std::vector<float>& shift) {
    scale.assign(size_t(C), 0.f);
    shift.assign(size_t(C), 0.f);
    int E = emb.c;
    for (int c = 0; c < 2 * C; ++c) {
        float acc = b[size_t(c)];
        for (int e = 0; e < E; ++e) acc += w.at2(c, e) * emb[size_t(e)];
        (c < C ? scale[size_t(c)] : shift[size_t(c - C)]) = acc;
    }
}

// ---- cross attention ---------------------------------------------------

struct AttnDims {
    int N, T, C, heads, hd;
};

// Packed stash layout: Q (N*C) | K (T*C) | V (T*C) | P (N*heads*T).
size_t attn_stash_size(const AttnDims& d) {
    return size_t(d.N) * d.C + 2 * size_t(d.T) * d.C + size_t(d.N) * d.heads * d.T;
}

void cross_attention_fwd(const Tensor& in, const Tensor& tokens, const Tensor& wq,
                         const Tensor& wk, const Tensor& wv, int heads, Tensor& out,
                         Tensor* stash) {
    AttnDims d{in.h * in.w, tokens.c, in.c, heads, in.c / heads};
    std::vector<float> q(size_t(d.N) * d.C), k(size_t(d.T) * d.C), v(size_t(d.T) * d.C);

    const int HW = d.N;
    for (int n = 0; n < d.N; ++n)
        for (int c = 0; c < d.C; ++c) {
            float acc = 0.f;
            for (int ic = 0; ic < d.C; ++ic) acc += wq.at2(c, ic) * in.data[size_t(ic) * HW + n];
            q[size_t(n) * d.C + c] = acc;
        }
    const int D = tokens.h;
    for (int t = 0; t < d.T; ++t)
        for (int c = 0; c < d.C; ++c) {
            float ka = 0.f, va = 0.f;
            for (int e = 0; e < D; ++e) {
                float tok = tokens.at2(t, e);
                ka += wk.at2(c, e) * tok;
                va += wv.at2(c, e) * tok;
            }
            k[size_t(t) * d.C + c] = ka;
            v[size_t(t) * d.C + c] = va;
        }

    std::vector<float> probs(size_t(d.N) * d.heads * d.T);
    const float inv_sqrt = 1.f / std::sqrt(float(d.hd));
    for (int n = 0; n < d.N; ++n) {
        for (int h = 0; h < d.heads; ++h) {
            float* p = &probs[(size_t(n) * d.heads + h) * d.T];
            float mx = -1e30f;
            for (int t = 0; t < d.T; ++t) {
                float s = 0.f;
                for (int e = 0; e < d.hd; ++e)
                    s += q[size_t(n) * d.C + h * d.hd + e] * k[size_t(t) * d.C + h * d.hd + e];
                p[t] = s * inv_sqrt;
                mx = std::max(mx, p[t]);
            }
            float sum = 0.f;
            for (int t = 0; t < d.T; ++t) {
                p[t] = std::exp(p[t] - mx);
                sum += p[t];
            }
            for (int t = 0; t < d.T; ++t) p[t] /= sum;
            for (int e = 0; e < d.hd; ++e) {
                float acc = 0.f;
                for (int t = 0; t < d.T; ++t) acc += p[t] * v[size_t(t) * d.C + h * d.hd + e];
                out.data[size_t(h * d.hd + e) * HW + n] = acc;
            }
        }
    }

    if (stash) {
        *stash = Tensor(int(attn_stash_size(d)), 1, 1);
        float* s = stash->data.data();
        std::memcpy(s, q.data(), q.size() * sizeof(float));
        std::memcpy(s + q.size(), k.data(), k.size() * sizeof(float));
        std::memcpy(s + q.size() + k.size(), v.data(), v.size() * sizeof(float));
        std::memcpy(s + q.size() + k.size() + v.size(), probs.data(), probs.size() * sizeof(float));
    }
}

void cross_attention_bwd(const Tensor& in, const Tensor& tokens, const Tensor& wq,
                         const Tensor& wk, const Tensor& wv, int heads, const Tensor& stash,
                         const Tensor& g, Tensor& d_in, Tensor& d_tokens, Tensor& d_wq,
                         Tensor& d_wk, Tensor& d_wv) {
    AttnDims d{in.h * in.w, tokens.c, in.c, heads, in.c / heads};
    const float* q = stash.data.data();
    const float* k = q + size_t(d.N) * d.C;
    const float* v = k + size_t(d.T) * d.C;
    const float* probs = v + size_t(d.T) * d.C;
    const int HW = d.N, D = tokens.h;
    const float inv_sqrt = 1.f / std::sqrt(float(d.hd));

    std::vector<float> dq(size_t(d.N) * d.C, 0.f), dk(size_t(d.T) * d.C, 0.f),
        dv(size_t(d.T) * d.C, 0.f);

    for (int n = 0; n < d.N; ++n) {
        for (int h = 0; h < d.heads; ++h) {
            const float* p = &probs[(size_t(n) * d.heads + h) * d.T];
            // d_p and softmax chain.
            float dp_dot = 0.f;
            std::vector<float> dp(size_t(d.T));
            for (int t = 0; t < d.T; ++t) {
                float acc = 0.f;
                for (int e = 0; e < d.hd; ++e)
                    acc += g.data[size_t(h * d.hd + e) * HW + n] * v[size_t(t) * d.C + h * d.hd + e];
                dp[size_t(t)] = acc;
                dp_dot += acc * p[t];
            }
            for (int t = 0; t < d.T; ++t) {
                for (int e = 0; e < d.hd; ++e)
                    dv[size_t(t) * d.C + h * d.hd + e] +=
                        p[t] * g.data[size_t(h * d.hd + e) * HW + n];
                float ds = p[t] * (dp[size_t(t)] - dp_dot) * inv_sqrt;
                for (int e = 0; e < d.hd; ++e) {
                    dq[size_t(n) * d.C + h * d.hd + e] += ds * k[size_t(t) * d.C + h * d.hd + e];
                    dk[size_t(t) * d.C + h * d.hd + e] += ds * q[size_t(n) * d.C + h * d.hd + e];
                }
            }
        }
    }

    for (int n = 0; n < d.N; ++n)
        for (int c = 0; c < d.C; ++c) {
            float dqv = dq[size_t(n) * d.C + c];
            if (dqv == 0.f) continue;
            for (int ic = 0; ic < d.C; ++ic) {
                d_wq.at2(c, ic) += dqv * in.data[size_t(ic) * HW + n];
                d_in.data[size_t(ic) * HW + n] += wq.at2(c, ic) * dqv;
            }
        }
    for (int t = 0; t < d.T; ++t)
        for (int c = 0; c < d.C; ++c) {
            float dkv = dk[size_t(t) * d.C + c];
            float dvv = dv[size_t(t) * d.C + c];
            for (int e = 0; e < D; ++e) {
                float tok = tokens.at2(t, e);
                d_wk.at2(c, e) += dkv * tok;
                d_wv.at2(c, e) += dvv * tok;
                d_tokens.at2(t, e) += wk.at2(c, e) * dkv + wv.at2(c, e) * dvv;
            }
        }
}

Tensor& grad_slot(std::map<std::string, Tensor>& grads, const std::string& name, const Tensor& like) {
    auto it = grads.find(name);
    if (it == grads.end()) it = grads.emplace(name, Tensor(like.c, like.h, like.w)).first;
    return it->second;
}

}  // namespace

void build_params(const Net& net, ParamStore& store, int in_c, int in_h, int in_w, uint64_t seed) {
    CounterRng rng(seed, rng_stream::init_weights);
    std::map<std::string, Shape> saved;
    Shape cur{in_c, in_h, in_w};

    auto ensure = [&](const std::string& name, int c, int h, int fan_in, bool zero, float fill = 0.f) {
        if (store.params.count(name)) return;
        Tensor t(c, h, 1);
        if (fill != 0.f)
            for (auto& v : t.data) v = fill;
        else if (!zero && fan_in > 0)
            he_fill(t, fan_in, rng);
        store.params.emplace(name, std::move(t));
    };

    for (const LayerSpec& l : net.layers) {
        switch (l.kind) {
            case LayerKind::conv3x3:
                ensure(l.name + ".w", l.out_ch, l.in_ch * 9, l.in_ch * 9, l.zero_init);
                ensure(l.name + ".b", l.out_ch, 1, 0, true);
                break;
            case LayerKind::conv1x1:
                ensure(l.name + ".w", l.out_ch, l.in_ch, l.in_ch, l.zero_init);
                ensure(l.name + ".b", l.out_ch, 1, 0, true);
                break;
            case LayerKind::transposed_conv4x4_stride2:
                ensure(l.name + ".w", l.in_ch, l.out_ch * 16, l.in_ch * 16, l.zero_init);
                ensure(l.name + ".b", l.out_ch, 1, 0, true);
                break;
            case LayerKind::linear:
                ensure(l.name + ".w", l.out_ch, l.in_ch, l.in_ch, l.zero_init);
                ensure(l.name + ".b", l.out_ch, 1, 0, true);
                break;
            case LayerKind::rms_norm:
                ensure(l.name + ".g", cur.c, 1, 0, true, 1.f);
                break;
            case LayerKind::film:
                // Zero init: the layer starts as the identity.
                ensure(l.name + ".w", 2 * cur.c, l.emb_dim, 0, true);
                ensure(l.name + ".b", 2 * cur.c, 1, 0, true);
                break;
            case LayerKind::cross_attention:
                ensure(l.name + ".wq", l.in_ch, l.in_ch, l.in_ch, l.zero_init);
                ensure(l.name + ".wk", l.in_ch, l.cond_dim, l.cond_dim, l.zero_init);
                ensure(l.name + ".wv", l.in_ch, l.cond_dim, l.cond_dim, l.zero_init);
                break;
            default:
                break;
        }
        cur = layer_output_shape(l, cur, saved);
        if (!l.save_as.empty()) saved[l.save_as] = cur;
    }
}

Tensor forward(const Net& net, const ParamStore& store, const Tensor& input, const AuxInputs& aux,
               ForwardTrace* trace) {
    if (trace) {
        trace->inputs.clear();
        trace->extra.assign(net.layers.size(), Tensor());
        trace->skip_sources.clear();
        trace->grads_enabled = true;
    }

    std::map<std::string, Tensor> saved;
    std::map<std::string, Shape> saved_shapes;
    Tensor cur = input;
    std::vector<float> scale, shift;

    for (size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        Shape in_shape{cur.c, cur.h, cur.w};
        Shape out_shape = layer_output_shape(l, in_shape, saved_shapes);
        if (trace) trace->inputs.push_back(cur);

        Tensor out(out_shape.c, out_shape.h, out_shape.w);
        switch (l.kind) {
            case LayerKind::conv3x3:
                conv3x3_fwd(cur, store.at(l.name + ".w"), store.at(l.name + ".b"), out);
                break;
            case LayerKind::conv1x1:
                conv1x1_fwd(cur, store.at(l.name + ".w"), store.at(l.name + ".b"), out);
                break;
            case LayerKind::transposed_conv4x4_stride2:
                tconv_fwd(cur, store.at(l.name + ".w"), store.at(l.name + ".b"), out);
                break;
            case LayerKind::linear:
                conv1x1_fwd(cur, store.at(l.name + ".w"), store.at(l.name + ".b"), out);
                break;
            case LayerKind::rms_norm:
                rms_norm_fwd(cur, store.at(l.name + ".g"), out);
                break;
            case LayerKind::silu:
                silu_fwd(cur, out);
                break;
            case LayerKind::film: {
                if (!aux.emb) bad_net(l, "film requires an aux embedding");
                film_scale_shift(store.at(l.name + ".w"), store.at(l.name + ".b"), *aux.emb, cur.c,
                                 scale, shift);
                const int HW = cur.h * cur.w;
                for (int c = 0; c < cur.c; ++c) {
                    const float* ip = cur.plane(c);
                    float* op = out.plane(c);
                    float sc = 1.f + scale[size_t(c)], sh = shift[size_t(c)];
                    for (int i = 0; i < HW; ++i) op[i] = ip[i] * sc + sh;
                }
                break;
            }
            case LayerKind::cross_attention:
                if (!aux.tokens) bad_net(l, "cross_attention requires condition tokens");
                cross_attention_fwd(cur, *aux.tokens, store.at(l.name + ".wq"),
                                    store.at(l.name + ".wk"), store.at(l.name + ".wv"), l.heads,
                                    out, trace ? &trace->extra[li] : nullptr);
                break;
            case LayerKind::nearest_upsample2x:
                for (int c = 0; c < cur.c; ++c)
                    for (int y = 0; y < out.h; ++y)
                        for (int x = 0; x < out.w; ++x) out.at(c, y, x) = cur.at(c, y / 2, x / 2);
                break;
            case LayerKind::avgpool2x:
                for (int c = 0; c < cur.c; ++c)
                    for (int y = 0; y < out.h; ++y)
                        for (int x = 0; x < out.w; ++x)
                            out.at(c, y, x) = 0.25f * (cur.at(c, 2 * y, 2 * x) +
                                                       cur.at(c, 2 * y, 2 * x + 1) +
                                                       cur.at(c, 2 * y + 1, 2 * x) +
                                                       cur.at(c, 2 * y + 1, 2 * x + 1));
                break;
            case LayerKind::add_skip: {
                const Tensor& s = saved.at(l.skip_from);
                out = cur;
                out += s;
                break;
            }
        }
        debug_check_finite(out, l);

        if (!l.save_as.empty()) {
            saved[l.save_as] = out;
            saved_shapes[l.save_as] = Shape{out.c, out.h, out.w};
            if (trace) trace->skip_sources[l.save_as] = int(li);
        }
        cur = std::move(out);
    }
    if (trace) trace->output = cur;
    return cur;
}

Gradients backward(const Net& net, const ParamStore& store, const ForwardTrace& trace,
                   const Tensor& grad_out, const AuxInputs& aux) {
    if (!trace.grads_enabled || trace.inputs.size() != net.layers.size())
        throw std::logic_error("backward requires a forward trace with gradients enabled");

    Gradients out;
    if (aux.emb) out.d_emb = Tensor(aux.emb->c, aux.emb->h, aux.emb->w);
    if (aux.tokens) out.d_tokens = Tensor(aux.tokens->c, aux.tokens->h, aux.tokens->w);

    std::vector<Tensor> pending(net.layers.size());
    std::vector<float> scale, shift;
    Tensor g = grad_out;

    for (size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& l = net.layers[li];
        const Tensor& in = trace.inputs[li];
        if (pending[li].size() > 0) g += pending[li];

        Tensor d_in(in.c, in.h, in.w);
        switch (l.kind) {
            case LayerKind::conv3x3:
                conv3x3_bwd(in, store.at(l.name + ".w"), g, d_in,
                            grad_slot(out.param_grads, l.name + ".w", store.at(l.name + ".w")),
                            grad_slot(out.param_grads, l.name + ".b", store.at(l.name + ".b")));
                break;
            case LayerKind::conv1x1:
            case LayerKind::linear:
                conv1x1_bwd(in, store.at(l.name + ".w"), g, d_in,
                            grad_slot(out.param_grads, l.name + ".w", store.at(l.name + ".w")),
                            grad_slot(out.param_grads, l.name + ".b", store.at(l.name + ".b")));
                break;
            case LayerKind::transposed_conv4x4_stride2:
                tconv_bwd(in, store.at(l.name + ".w"), g, d_in,
                          grad_slot(out.param_grads, l.name + ".w", store.at(l.name + ".w")),
                          grad_slot(out.param_grads, l.name + ".b", store.at(l.name + ".b")));
                break;
            case LayerKind::rms_norm:
                rms_norm_bwd(in, store.at(l.name + ".g"), g, d_in,
                             grad_slot(out.param_grads, l.name + ".g", store.at(l.name + ".g")));
                break;
            case LayerKind::silu:
                silu_bwd(in, g, d_in);
                break;
            case LayerKind::film: {
                const Tensor& w = store.at(l.name + ".w");
                film_scale_shift(w, store.at(l.name + ".b"), *aux.emb, in.c, scale, shift);
                Tensor& d_w = grad_slot(out.param_grads, l.name + ".w", w);
                Tensor& d_b = grad_slot(out.param_grads, l.name + ".b", store.at(l.name + ".b"));
                const int HW = in.h * in.w, C = in.c, E = aux.emb->c;
                for (int c = 0; c < C; ++c) {
                    const float* ip = in.plane(c);
                    const float* gp = g.plane(c);
                    float* dip = d_in.plane(c);
                    float d_scale = 0.f, d_shift = 0.f;
                    float sc = 1.f + scale[size_t(c)];
                    for (int i = 0; i < HW; ++i) {
                        d_scale += gp[i] * ip[i];
                        d_shift += gp[i];
                        dip[i] += gp[i] * sc;
                    }
                    d_b[size_t(c)] += d_scale;
                    d_b[size_t(C + c)] += d_shift;
                    for (int e = 0; e < E; ++e) {
                        float ev = (*aux.emb)[size_t(e)];
                        d_w.at2(c, e) += d_scale * ev;
                        d_w.at2(C + c, e) += d_shift * ev;
                        out.d_emb[size_t(e)] += w.at2(c, e) * d_scale + w.at2(C + c, e) * d_shift;
                    }
                }
                break;
            }
            case LayerKind::cross_attention:
                cross_attention_bwd(
                    in, *aux.tokens, store.at(l.name + ".wq"), store.at(l.name + ".wk"),
                    store.at(l.name + ".wv"), l.heads, trace.extra[li], g, d_in, out.d_tokens,
                    grad_slot(out.param_grads, l.name + ".wq", store.at(l.name + ".wq")),
                    grad_slot(out.param_grads, l.name + ".wk", store.at(l.name + ".wk")),
                    grad_slot(out.param_grads, l.name + ".wv", store.at(l.name + ".wv")));
                break;
            case LayerKind::nearest_upsample2x:
                for (int c = 0; c < in.c; ++c)
                    for (int y = 0; y < g.h; ++y)
                        for (int x = 0; x < g.w; ++x) d_in.at(c, y / 2, x / 2) += g.at(c, y, x);
                break;
            case LayerKind::avgpool2x:
                for (int c = 0; c < in.c; ++c)
                    for (int y = 0; y < g.h; ++y)
                        for (int x = 0; x < g.w; ++x) {
                            float v = 0.25f * g.at(c, y, x);
                            d_in.at(c, 2 * y, 2 * x) += v;
                            d_in.at(c, 2 * y, 2 * x + 1) += v;
                            d_in.at(c, 2 * y + 1, 2 * x) += v;
                            d_in.at(c, 2 * y + 1, 2 * x + 1) += v;
                        }
                break;
            case LayerKind::add_skip: {
                int src = trace.skip_sources.at(l.skip_from);
                if (pending[size_t(src)].size() == 0)
                    pending[size_t(src)] = g;
                else
                    pending[size_t(src)] += g;
                d_in = g;
                break;
            }
        }
        g = std::move(d_in);
    }
    out.d_input = std::move(g);
    return out;
}

void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads, float lr, float beta1,
               float beta2, float eps) {
    store.step += 1;
    double bc1 = 1.0 - std::pow(double(beta1), double(store.step));
    double bc2 = 1.0 - std::pow(double(beta2), double(store.step));

    for (auto& [name, p] : store.params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& grad = git->second;
        if (!grad.same_shape(p)) throw std::invalid_argument("gradient shape mismatch for " + name);

        auto mit = store.adam_m.find(name);
        if (mit == store.adam_m.end()) mit = store.adam_m.emplace(name, Tensor(p.c, p.h, p.w)).first;
        auto vit = store.adam_v.find(name);
        if (vit == store.adam_v.end()) vit = store.adam_v.emplace(name, Tensor(p.c, p.h, p.w)).first;
        Tensor& m = mit->second;
        Tensor& v = vit->second;

        for (size_t i = 0; i < p.size(); ++i) {
            float gi = grad.data[i];
            m.data[i] = beta1 * m.data[i] + (1.f - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (1.f - beta2) * gi * gi;
            float mhat = float(double(m.data[i]) / bc1);
            float vhat = float(double(v.data[i]) / bc2);
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void accumulate_grads(std::map<std::string, Tensor>& into, const std::map<std::string, Tensor>& from) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end())
            into.emplace(name, g);
        else
            it->second += g;
    }
}

void scale_grads(std::map<std::string, Tensor>& grads, float s) {
    for (auto& [name, g] : grads) g *= s;
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
    atomic_write(path, [&](BinaryWriter& w) {
        w.magic("TCKP");
        w.u32(1);
        w.u64(uint64_t(store.step));
        auto write_map = [&](const std::map<std::string, Tensor>& m) {
            w.u32(uint32_t(m.size()));
            for (const auto& [name, t] : m) {
                w.str(name);
                w.u32(uint32_t(t.c));
                w.u32(uint32_t(t.h));
                w.u32(uint32_t(t.w));
                w.f32_array(t.data);
            }
        };
        write_map(store.params);
        write_map(store.adam_m);
        write_map(store.adam_v);
    });
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is = open_input(path);
    BinaryReader r(is, path);
    r.expect_magic("TCKP");
    if (r.u32() != 1) throw std::runtime_error(path + ": unsupported TCKP version");
    ParamStore store;
    store.step = int64_t(r.u64());
    auto read_map = [&](std::map<std::string, Tensor>& m) {
        uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = r.str();
            int c = int(r.u32()), h = int(r.u32()), w = int(r.u32());
            Tensor t(c, h, w);
            r.f32_array(t.data.data(), t.size());
            m.emplace(std::move(name), std::move(t));
        }
    };
    read_map(store.params);
    read_map(store.adam_m);
    read_map(store.adam_v);
    return store;
}

void softmax_rows(Tensor& t) {
    for (int i = 0; i < t.c; ++i) {
        float mx = -1e30f;
        for (int j = 0; j < t.h; ++j) mx = std::max(mx, t.at2(i, j));
        float sum = 0.f;
        for (int j = 0; j < t.h; ++j) {
            float e = std::exp(t.at2(i, j) - mx);
            t.at2(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < t.h; ++j) t.at2(i, j) /= sum;
    }
}

}  // namespace uvga
