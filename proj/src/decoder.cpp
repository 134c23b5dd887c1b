#include "uvga/decoder.hpp"

#include <cmath>
#include <stdexcept>

#include "uvga/parallel.hpp"

namespace uvga {

namespace {

constexpr float kLambdaImage = 20.f;
constexpr float kLambdaFeature = 20.f;
constexpr float kLambdaOffset = 1.f;

LayerSpec conv3(const std::string& name, int in, int out, bool zero = false) {
    LayerSpec l;
    l.kind = LayerKind::conv3x3;
    l.name = name;
    l.in_ch = in;
    l.out_ch = out;
    l.zero_init = zero;
    return l;
}

LayerSpec conv1(const std::string& name, int in, int out, bool zero = false) {
    LayerSpec l;
    l.kind = LayerKind::conv1x1;
    l.name = name;
    l.in_ch = in;
    l.out_ch = out;
    l.zero_init = zero;
    return l;
}

LayerSpec tconv(const std::string& name, int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::transposed_conv4x4_stride2;
    l.name = name;
    l.in_ch = in;
    l.out_ch = out;
    return l;
}

LayerSpec silu(const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::silu;
    l.name = name;
    return l;
}

}  // namespace

DecoderNet make_decoder(int latent_channels) {
    DecoderNet d;
    d.latent_channels = latent_channels;
    const int tc = d.trunk_channels;
    d.trunk.layers = {
        tconv("dec.up1", latent_channels, tc), silu("dec.s1"),
        conv3("dec.c1", tc, tc),               silu("dec.s2"),
        tconv("dec.up2", tc, tc),              silu("dec.s3"),
        conv3("dec.c2", tc, tc),               silu("dec.s4"),
    };
    const int half = tc / 2;
    d.geo_head.layers = {conv3("dec.geo1", half, half), silu("dec.geos"),
                         conv1("dec.geo2", half, 10, true)};
    d.tex_head.layers = {conv3("dec.tex1", half, half), silu("dec.texs"),
                         conv1("dec.tex2", half, 4, true)};
    return d;
}

void init_decoder_params(const DecoderNet& dec, ParamStore& store, int latent_h, int latent_w,
                         uint64_t seed) {
    build_params(dec.trunk, store, dec.latent_channels, latent_h, latent_w, seed);
    const int half = dec.trunk_channels / 2;
    build_params(dec.geo_head, store, half, latent_h * 4, latent_w * 4, seed + 1);
    build_params(dec.tex_head, store, half, latent_h * 4, latent_w * 4, seed + 2);
}

namespace {

void split_trunk(const Tensor& trunk_out, int half, Tensor& geo_in, Tensor& tex_in) {
    geo_in = Tensor(half, trunk_out.h, trunk_out.w);
    tex_in = Tensor(half, trunk_out.h, trunk_out.w);
    size_t plane = size_t(trunk_out.h) * trunk_out.w;
    std::copy_n(trunk_out.data.data(), plane * half, geo_in.data.data());
    std::copy_n(trunk_out.data.data() + plane * half, plane * half, tex_in.data.data());
}

}  // namespace

Tensor decode_traced(const DecoderNet& dec, const ParamStore& store, const Tensor& latent,
                     DecodeTrace& trace) {
    if (latent.c != dec.latent_channels)
        throw std::invalid_argument("latent channel count does not match decoder");
    AuxInputs no_aux;
    Tensor trunk_out = forward(dec.trunk, store, latent, no_aux, &trace.trunk);

    const int half = dec.trunk_channels / 2;
    Tensor geo_in, tex_in;
    split_trunk(trunk_out, half, geo_in, tex_in);
    Tensor geo = forward(dec.geo_head, store, geo_in, no_aux, &trace.geo);
    Tensor tex = forward(dec.tex_head, store, tex_in, no_aux, &trace.tex);

    Tensor out(AttributeMap::kChannels, trunk_out.h, trunk_out.w);
    size_t plane = size_t(out.h) * out.w;
    std::copy_n(geo.data.data(), plane * 10, out.data.data());
    std::copy_n(tex.data.data(), plane * 4, out.data.data() + plane * 10);
    return out;
}

AttributeMap decode(const DecoderNet& dec, const ParamStore& store, const Tensor& latent) {
    AuxInputs no_aux;
    Tensor trunk_out = forward(dec.trunk, store, latent, no_aux);
    const int half = dec.trunk_channels / 2;
    Tensor geo_in, tex_in;
    split_trunk(trunk_out, half, geo_in, tex_in);
    Tensor geo = forward(dec.geo_head, store, geo_in, no_aux);
    Tensor tex = forward(dec.tex_head, store, tex_in, no_aux);

    AttributeMap m(trunk_out.w, trunk_out.h);
    size_t plane = size_t(m.height) * m.width;
    std::copy_n(geo.data.data(), plane * 10, m.values.data());
    std::copy_n(tex.data.data(), plane * 4, m.values.data() + plane * 10);
    return m;
}

Gradients decode_backward(const DecoderNet& dec, const ParamStore& store, const DecodeTrace& trace,
                          const Tensor& grad_map) {
    const int half = dec.trunk_channels / 2;
    size_t plane = size_t(grad_map.h) * grad_map.w;

    Tensor g_geo(10, grad_map.h, grad_map.w), g_tex(4, grad_map.h, grad_map.w);
    std::copy_n(grad_map.data.data(), plane * 10, g_geo.data.data());
    std::copy_n(grad_map.data.data() + plane * 10, plane * 4, g_tex.data.data());

    AuxInputs no_aux;
    Gradients geo_grads = backward(dec.geo_head, store, trace.geo, g_geo, no_aux);
    Gradients tex_grads = backward(dec.tex_head, store, trace.tex, g_tex, no_aux);

    Tensor g_trunk(dec.trunk_channels, grad_map.h, grad_map.w);
    std::copy_n(geo_grads.d_input.data.data(), plane * half, g_trunk.data.data());
    std::copy_n(tex_grads.d_input.data.data(), plane * half, g_trunk.data.data() + plane * half);

    Gradients out = backward(dec.trunk, store, trace.trunk, g_trunk, no_aux);
    accumulate_grads(out.param_grads, geo_grads.param_grads);
    accumulate_grads(out.param_grads, tex_grads.param_grads);
    return out;
}

// ---- Gaussian pyramid L1 ------------------------------------------------

namespace {

// Separable [1 4 6 4 1]/16 blur with zero padding, then 2x decimation.
void blur_decimate(const std::vector<float>& in, int h, int w, std::vector<float>& out, int& oh,
                   int& ow) {
    static const float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
    std::vector<float> tmp(size_t(3) * h * w, 0.f);
    for (int c = 0; c < 3; ++c) {
        const float* ip = in.data() + size_t(c) * h * w;
        float* tp = tmp.data() + size_t(c) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float acc = 0.f;
                for (int t = -2; t <= 2; ++t) {
                    int xx = x + t;
                    if (xx >= 0 && xx < w) acc += k[t + 2] * ip[size_t(y) * w + xx];
                }
                tp[size_t(y) * w + x] = acc;
            }
    }
    oh = h / 2;
    ow = w / 2;
    out.assign(size_t(3) * oh * ow, 0.f);
    for (int c = 0; c < 3; ++c) {
        const float* tp = tmp.data() + size_t(c) * h * w;
        float* op = out.data() + size_t(c) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                float acc = 0.f;
                for (int t = -2; t <= 2; ++t) {
                    int yy = 2 * y + t;
                    if (yy >= 0 && yy < h) acc += k[t + 2] * tp[size_t(yy) * w + 2 * x];
                }
                op[size_t(y) * ow + x] = acc;
            }
    }
}

// Transpose of blur_decimate.
void blur_decimate_t(const std::vector<float>& g, int oh, int ow, std::vector<float>& out, int h,
                     int w) {
    static const float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
    std::vector<float> tmp(size_t(3) * h * w, 0.f);
    for (int c = 0; c < 3; ++c) {
        const float* gp = g.data() + size_t(c) * oh * ow;
        float* tp = tmp.data() + size_t(c) * h * w;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                float gv = gp[size_t(y) * ow + x];
                for (int t = -2; t <= 2; ++t) {
                    int yy = 2 * y + t;
                    if (yy >= 0 && yy < h) tp[size_t(yy) * w + 2 * x] += k[t + 2] * gv;
                }
            }
    }
    out.assign(size_t(3) * h * w, 0.f);
    for (int c = 0; c < 3; ++c) {
        const float* tp = tmp.data() + size_t(c) * h * w;
        float* op = out.data() + size_t(c) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float gv = tp[size_t(y) * w + x];
                if (gv == 0.f) continue;
                for (int t = -2; t <= 2; ++t) {
                    int xx = x + t;
                    if (xx >= 0 && xx < w) op[size_t(y) * w + xx] += k[t + 2] * gv;
                }
            }
    }
}

}  // namespace

double pyramid_l1(const std::vector<float>& pred, const std::vector<float>& gt, int height,
                  int width, std::vector<float>* grad_pred, float grad_scale) {
    constexpr int kLevels = 3;
    std::vector<std::vector<float>> p_lv, g_lv;
    std::vector<int> hs, ws;
    std::vector<float> p = pred, g = gt;
    int h = height, w = width;
    for (int l = 0; l < kLevels; ++l) {
        std::vector<float> pn, gn;
        int oh, ow;
        blur_decimate(p, h, w, pn, oh, ow);
        blur_decimate(g, h, w, gn, oh, ow);
        p = std::move(pn);
        g = std::move(gn);
        h = oh;
        w = ow;
        p_lv.push_back(p);
        g_lv.push_back(g);
        hs.push_back(h);
        ws.push_back(w);
    }

    double loss = 0.0;
    std::vector<std::vector<float>> level_grads(kLevels);
    for (int l = 0; l < kLevels; ++l) {
        size_t n = p_lv[size_t(l)].size();
        level_grads[size_t(l)].assign(n, 0.f);
        double acc = 0.0;
        float inv_n = 1.f / float(n);
        for (size_t i = 0; i < n; ++i) {
            float d = p_lv[size_t(l)][i] - g_lv[size_t(l)][i];
            acc += std::fabs(d);
            level_grads[size_t(l)][i] = (d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f)) * inv_n;
        }
        loss += acc / double(n);
    }

    if (grad_pred) {
        // Collapse level gradients back to the full resolution.
        std::vector<float> up = level_grads[kLevels - 1];
        for (int l = kLevels - 1; l > 0; --l) {
            std::vector<float> prev;
            blur_decimate_t(up, hs[size_t(l)], ws[size_t(l)], prev, hs[size_t(l - 1)],
                            ws[size_t(l - 1)]);
            for (size_t i = 0; i < prev.size(); ++i) prev[i] += level_grads[size_t(l - 1)][i];
            up = std::move(prev);
        }
        std::vector<float> full;
        blur_decimate_t(up, hs[0], ws[0], full, height, width);
        for (size_t i = 0; i < full.size(); ++i) (*grad_pred)[i] += grad_scale * full[i];
    }
    return loss;
}

DecoderLossRecord train_decoder_step(const DecoderNet& dec, ParamStore& store,
                                     const std::vector<DecoderSample>& batch, DecoderLossMode mode,
                                     float lr) {
    if (batch.empty()) throw std::invalid_argument("empty decoder batch");
    if (mode == DecoderLossMode::render)
        for (const auto& s : batch)
            if (!s.base || !s.cameras || !s.gt_renders)
                throw std::invalid_argument("render mode requires base gaussians and camera data");

    const size_t B = batch.size();
    std::vector<std::map<std::string, Tensor>> grads(B);
    std::vector<DecoderLossRecord> records(B);

    parallel_for(int(B), [&](int bi) {
        const DecoderSample& s = batch[size_t(bi)];
        DecodeTrace trace;
        Tensor pred = decode_traced(dec, store, s.latent, trace);
        Tensor grad_map(pred.c, pred.h, pred.w);
        DecoderLossRecord rec;
        size_t plane = size_t(pred.h) * pred.w;

        // Offset penalty on the decoded position-offset channels.
        for (size_t i = 0; i < plane * 3; ++i) {
            float v = pred.data[i];
            rec.offset += kLambdaOffset * double(v) * v;
            grad_map.data[i] += 2.f * kLambdaOffset * v;
        }

        if (mode == DecoderLossMode::attribute) {
            for (size_t i = 0; i < pred.size(); ++i) {
                float d = pred.data[i] - s.attrs_gt->values[i];
                rec.attr += double(d) * d;
                grad_map.data[i] += 2.f * d;
            }
        } else {
            AttributeMap pred_map(pred.w, pred.h);
            pred_map.values = pred.data;
            GaussianSet set = apply_offsets(*s.base, pred_map);
            std::vector<GaussianGrad> set_grads(set.size());

            for (size_t vi = 0; vi < s.cameras->size(); ++vi) {
                const Camera& cam = (*s.cameras)[vi];
                std::vector<Splat2D> splats = project(set, cam);
                RenderedImage img = rasterize(splats, cam);
                const RenderedImage& gt = (*s.gt_renders)[vi];

                std::vector<float> grad_rgb(img.rgb.size(), 0.f);
                for (size_t i = 0; i < img.rgb.size(); ++i) {
                    float d = img.rgb[i] - gt.rgb[i];
                    rec.image_l2 += kLambdaImage * double(d) * d;
                    grad_rgb[i] = 2.f * kLambdaImage * d;
                }
                rec.feature += kLambdaFeature *
                               pyramid_l1(img.rgb, gt.rgb, img.height, img.width, &grad_rgb,
                                          kLambdaFeature);

                RenderGrads rg = rasterize_backward(set, splats, cam, grad_rgb);
                for (size_t gi = 0; gi < set.size(); ++gi) {
                    const GaussianGrad& src = rg.d_gaussians[gi];
                    GaussianGrad& dst = set_grads[gi];
                    dst.d_mu += src.d_mu;
                    for (int k = 0; k < 4; ++k) dst.d_rot[k] += src.d_rot[k];
                    dst.d_scale += src.d_scale;
                    dst.d_color += src.d_color;
                    dst.d_alpha += src.d_alpha;
                }
            }

            AttributeMap attr_grad = apply_offsets_backward(*s.base, pred_map, set_grads);
            for (size_t i = 0; i < grad_map.size(); ++i) grad_map.data[i] += attr_grad.values[i];
        }

        rec.total = rec.attr + rec.image_l2 + rec.feature + rec.offset;
        records[size_t(bi)] = rec;
        Gradients g = decode_backward(dec, store, trace, grad_map);
        grads[size_t(bi)] = std::move(g.param_grads);
    });

    std::map<std::string, Tensor> merged;
    DecoderLossRecord total;
    for (size_t bi = 0; bi < B; ++bi) {
        accumulate_grads(merged, grads[bi]);
        total.total += records[bi].total;
        total.attr += records[bi].attr;
        total.image_l2 += records[bi].image_l2;
        total.feature += records[bi].feature;
        total.offset += records[bi].offset;
    }
    scale_grads(merged, 1.f / float(B));
    adam_step(store, merged, lr);

    total.total /= double(B);
    total.attr /= double(B);
    total.image_l2 /= double(B);
    total.feature /= double(B);
    total.offset /= double(B);
    return total;
}

}  // namespace uvga
