#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uvga/tensor.hpp"

namespace uvga {

enum class LayerKind {
    conv3x3,
    conv1x1,
    transposed_conv4x4_stride2,
    linear,
    rms_norm,
    silu,
    film,
    cross_attention,
    nearest_upsample2x,
    avgpool2x,
    add_skip,
};

struct LayerSpec {
    LayerKind kind;
    std::string name;  // unique parameter prefix

    int in_ch = 0;
    int out_ch = 0;
    int heads = 0;     // cross_attention
    int cond_dim = 0;  // cross_attention condition token width
    int emb_dim = 0;   // film conditioning vector width

    std::string save_as;    // save this layer's output under a skip name
    std::string skip_from;  // add_skip source name
    bool zero_init = false;
};

struct Net {
    std::vector<LayerSpec> layers;
};

// Named parameters plus Adam moments. Single writer; reads are safe from
// any thread between optimizer steps.
struct ParamStore {
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    int64_t step = 0;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
};

// Extra inputs a forward pass may consume: a conditioning vector for film
// layers and condition tokens (rows) for cross_attention.
struct AuxInputs {
    const Tensor* emb = nullptr;     // (emb_dim, 1, 1)
    const Tensor* tokens = nullptr;  // (n_tokens, cond_dim, 1)
};

// Saved activations from a forward pass with gradients enabled.
struct ForwardTrace {
    std::vector<Tensor> inputs;        // input of each layer
    std::vector<Tensor> extra;         // per-layer stash (attention probs, norms)
    std::map<std::string, int> skip_sources;
    Tensor output;
    bool grads_enabled = false;
};

struct Gradients {
    std::map<std::string, Tensor> param_grads;
    Tensor d_input;
    Tensor d_emb;     // film chain, shape of aux.emb
    Tensor d_tokens;  // cross_attention chain, shape of aux.tokens
};

// Verifies channel arithmetic for the given input shape and instantiates
// missing parameters (He-normal, or zeros where zero_init is set).
// Throws std::invalid_argument naming the offending layer.
void build_params(const Net& net, ParamStore& store, int in_c, int in_h, int in_w, uint64_t seed);

Tensor forward(const Net& net, const ParamStore& store, const Tensor& input, const AuxInputs& aux,
               ForwardTrace* trace = nullptr);

Gradients backward(const Net& net, const ParamStore& store, const ForwardTrace& trace,
                   const Tensor& grad_out, const AuxInputs& aux);

// Bias-corrected Adam. Gradients missing from `grads` leave their
// parameters untouched.
void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads, float lr,
               float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

// Merge: accumulate `from` into `into` (missing keys are inserted).
void accumulate_grads(std::map<std::string, Tensor>& into, const std::map<std::string, Tensor>& from);
void scale_grads(std::map<std::string, Tensor>& grads, float s);

void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

// Row-wise softmax helper, exposed for testing.
void softmax_rows(Tensor& t);

}  // namespace uvga
