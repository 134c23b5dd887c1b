#pragma once

#include <vector>

#include "uvga/camera.hpp"
#include "uvga/nn.hpp"
#include "uvga/renderer.hpp"
#include "uvga/teacher.hpp"
#include "uvga/uv_gaussians.hpp"

namespace uvga {

// Convolutional decoder restoring a latent to a full-resolution attribute
// map: two stride-2 transposed convs interleaved with 3x3 convs, then a
// geometry head (first half of the trunk channels -> delta maps) and a
// texture head (second half -> color and opacity).
struct DecoderNet {
    int latent_channels = 8;
    int trunk_channels = 32;
    Net trunk;
    Net geo_head;  // 10 channels: delta_pos, delta_rot, delta_scale
    Net tex_head;  // 4 channels: color, opacity
};

DecoderNet make_decoder(int latent_channels = 8);

void init_decoder_params(const DecoderNet& dec, ParamStore& store, int latent_h, int latent_w,
                         uint64_t seed);

AttributeMap decode(const DecoderNet& dec, const ParamStore& store, const Tensor& latent);

// Traced version for training.
struct DecodeTrace {
    ForwardTrace trunk, geo, tex;
};
Tensor decode_traced(const DecoderNet& dec, const ParamStore& store, const Tensor& latent,
                     DecodeTrace& trace);
// grad_map is (kChannels, H, W); returns parameter grads and d_latent.
Gradients decode_backward(const DecoderNet& dec, const ParamStore& store, const DecodeTrace& trace,
                          const Tensor& grad_map);

enum class DecoderLossMode { attribute, render };

struct DecoderSample {
    Tensor latent;
    const AttributeMap* attrs_gt = nullptr;       // attribute mode
    const BaseGaussians* base = nullptr;          // render mode
    const std::vector<Camera>* cameras = nullptr;
    const std::vector<RenderedImage>* gt_renders = nullptr;
};

struct DecoderLossRecord {
    double total = 0;
    double attr = 0;
    double image_l2 = 0;
    double feature = 0;
    double offset = 0;
};

// One optimizer step. Attribute mode: |attrs - gt|^2 + offset penalty.
// Render mode: sum over views of 20*L2 + 20*pyramid-L1 plus the offset
// penalty, with gradients chained through the rasterizer and activations.
DecoderLossRecord train_decoder_step(const DecoderNet& dec, ParamStore& store,
                                     const std::vector<DecoderSample>& batch, DecoderLossMode mode,
                                     float lr);

// 3-level Gaussian-pyramid mean-L1 between images (planar 3xHxW). If
// grad_pred is non-null the gradient is accumulated into it.
double pyramid_l1(const std::vector<float>& pred, const std::vector<float>& gt, int height,
                  int width, std::vector<float>* grad_pred, float grad_scale = 1.f);

}  // namespace uvga
