#include "uvga/denoiser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "uvga/parallel.hpp"
#include "uvga/rng.hpp"
#include "uvga/synthetic.hpp"

namespace uvga {

int TextEmbedder::word_index(const std::string& word) const {
    for (size_t i = 2; i < vocab.size(); ++i)
        if (vocab[i] == word) return int(i);
    return 1;  // unknown
}

TextEmbedder make_text_embedder() {
    TextEmbedder e;
    e.vocab = {"<null>", "<unk>"};
    const auto& grammar = caption_vocabulary();
    e.vocab.insert(e.vocab.end(), grammar.begin(), grammar.end());
    return e;
}

std::vector<int> caption_token_ids(const TextEmbedder& e, const std::optional<std::string>& caption) {
    if (!caption) return {0};
    std::string lowered = *caption;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    for (auto& c : lowered)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = ' ';

    std::vector<int> ids;
    size_t pos = 0;
    while (pos < lowered.size() && int(ids.size()) < e.max_tokens) {
        while (pos < lowered.size() && lowered[pos] == ' ') ++pos;
        size_t end = pos;
        while (end < lowered.size() && lowered[end] != ' ') ++end;
        if (end > pos) ids.push_back(e.word_index(lowered.substr(pos, end - pos)));
        pos = end;
    }
    if (ids.empty()) ids.push_back(0);
    return ids;
}

Tensor embed_tokens(const TextEmbedder& e, const ParamStore& store, const std::vector<int>& ids) {
    const Tensor& table = store.at("embed.table");
    Tensor out(int(ids.size()), e.dim, 1);
    for (size_t i = 0; i < ids.size(); ++i)
        for (int d = 0; d < e.dim; ++d) out.at2(int(i), d) = table.at2(ids[i], d);
    return out;
}

void embed_tokens_backward(const TextEmbedder& e, const ParamStore& store,
                           const std::vector<int>& ids, const Tensor& d_tokens,
                           std::map<std::string, Tensor>& grads) {
    const Tensor& table = store.at("embed.table");
    auto it = grads.find("embed.table");
    if (it == grads.end())
        it = grads.emplace("embed.table", Tensor(table.c, table.h, table.w)).first;
    for (size_t i = 0; i < ids.size(); ++i)
        for (int d = 0; d < e.dim; ++d) it->second.at2(ids[i], d) += d_tokens.at2(int(i), d);
}

namespace {

LayerSpec layer(LayerKind kind, const std::string& name, int in = 0, int out = 0) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    l.in_ch = in;
    l.out_ch = out;
    return l;
}

void append_resblock(Net& net, const std::string& name, int width, int emb_dim) {
    if (net.layers.empty()) throw std::logic_error("resblock needs a preceding layer");
    net.layers.back().save_as = name + ".res";

    net.layers.push_back(layer(LayerKind::rms_norm, name + ".n"));
    net.layers.push_back(layer(LayerKind::silu, name + ".s1"));
    net.layers.push_back(layer(LayerKind::conv3x3, name + ".c1", width, width));
    LayerSpec film = layer(LayerKind::film, name + ".f");
    film.emb_dim = emb_dim;
    net.layers.push_back(film);
    net.layers.push_back(layer(LayerKind::silu, name + ".s2"));
    net.layers.push_back(layer(LayerKind::conv3x3, name + ".c2", width, width));
    LayerSpec add = layer(LayerKind::add_skip, name + ".add");
    add.skip_from = name + ".res";
    net.layers.push_back(add);
}

}  // namespace

DenoiserNet make_denoiser(int latent_channels, int total_steps) {
    DenoiserNet dn;
    dn.latent_channels = latent_channels;
    dn.total_steps = total_steps;
    dn.embedder = make_text_embedder();
    const int wc = dn.width;

    Net& n = dn.main;
    n.layers.push_back(layer(LayerKind::conv3x3, "dn.in", latent_channels, wc));
    append_resblock(n, "dn.rb1", wc, dn.time_dim);
    append_resblock(n, "dn.rb2", wc, dn.time_dim);
    n.layers.back().save_as = "dn.pre_pool";

    n.layers.push_back(layer(LayerKind::avgpool2x, "dn.pool"));
    n.layers.back().save_as = "dn.ca.res";
    n.layers.push_back(layer(LayerKind::rms_norm, "dn.ca.n"));
    LayerSpec attn = layer(LayerKind::cross_attention, "dn.ca.attn", wc, wc);
    attn.heads = dn.heads;
    attn.cond_dim = dn.embedder.dim;
    n.layers.push_back(attn);
    LayerSpec proj = layer(LayerKind::conv1x1, "dn.ca.proj", wc, wc);
    proj.zero_init = true;
    n.layers.push_back(proj);
    LayerSpec ca_add = layer(LayerKind::add_skip, "dn.ca.add");
    ca_add.skip_from = "dn.ca.res";
    n.layers.push_back(ca_add);

    append_resblock(n, "dn.rb3", wc, dn.time_dim);
    append_resblock(n, "dn.rb4", wc, dn.time_dim);

    n.layers.push_back(layer(LayerKind::nearest_upsample2x, "dn.up"));
    LayerSpec up_add = layer(LayerKind::add_skip, "dn.skip");
    up_add.skip_from = "dn.pre_pool";
    n.layers.push_back(up_add);

    LayerSpec out = layer(LayerKind::conv3x3, "dn.out", wc, latent_channels);
    out.zero_init = true;
    n.layers.push_back(out);

    dn.time_mlp.layers = {layer(LayerKind::linear, "dn.t1", dn.time_dim, dn.time_dim),
                          layer(LayerKind::silu, "dn.ts"),
                          layer(LayerKind::linear, "dn.t2", dn.time_dim, dn.time_dim)};
    return dn;
}

void init_denoiser_params(const DenoiserNet& dn, ParamStore& store, int latent_h, int latent_w,
                          uint64_t seed) {
    build_params(dn.main, store, dn.latent_channels, latent_h, latent_w, seed);
    build_params(dn.time_mlp, store, dn.time_dim, 1, 1, seed + 1);
    if (!store.params.count("embed.table")) {
        Tensor table(dn.embedder.vocab_size(), dn.embedder.dim, 1);
        CounterRng rng(seed + 2, rng_stream::init_weights);
        for (auto& v : table.data) v = rng.next_normal() * 0.05f;
        store.params.emplace("embed.table", std::move(table));
    }
}

Tensor sinusoidal_time_embedding(int t, int dim) {
    Tensor out(dim, 1, 1);
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
        out[size_t(i)] = float(std::sin(double(t) * freq));
        out[size_t(half + i)] = float(std::cos(double(t) * freq));
    }
    return out;
}

Tensor predict_x0(const DenoiserNet& dn, const ParamStore& store, const Tensor& f_t, int t,
                  const Tensor* cond_tokens) {
    if (t < 1 || t > dn.total_steps)
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1, T]");

    Tensor sin_emb = sinusoidal_time_embedding(t, dn.time_dim);
    AuxInputs mlp_aux;
    Tensor emb = forward(dn.time_mlp, store, sin_emb, mlp_aux);

    Tensor null_tokens;
    const Tensor* tokens = cond_tokens;
    if (!tokens) {
        null_tokens = embed_tokens(dn.embedder, store, {0});
        tokens = &null_tokens;
    }

    AuxInputs aux;
    aux.emb = &emb;
    aux.tokens = tokens;
    return forward(dn.main, store, f_t, aux);
}

X0Predictor make_predictor(const DenoiserNet& dn, const ParamStore& store) {
    return [&dn, &store](const Tensor& x_t, int t, const Tensor* cond_tokens) {
        return predict_x0(dn, store, x_t, t, cond_tokens);
    };
}

bool caption_dropout(uint64_t seed, int64_t step, int sample, float p) {
    uint64_t bits = CounterRng::mix(seed, rng_stream::cond_dropout,
                                    (uint64_t(step) << 16) | uint64_t(sample & 0xFFFF));
    double u = double(bits >> 11) * 0x1.0p-53;
    return u < double(p);
}

DenoiserStepRecord train_denoiser_step(const DenoiserNet& dn, ParamStore& store,
                                       const NoiseSchedule& schedule,
                                       const std::vector<const Tensor*>& latents,
                                       const std::vector<std::string>& captions, float lr,
                                       float dropout_p, int64_t step_index, uint64_t seed) {
    if (latents.empty() || latents.size() != captions.size())
        throw std::invalid_argument("denoiser batch latents/captions mismatch");

    const int B = int(latents.size());
    DenoiserStepRecord rec;
    rec.dropped.assign(size_t(B), 0);
    std::vector<std::map<std::string, Tensor>> grads;
    grads.resize(size_t(B));
    std::vector<double> losses(size_t(B), 0.0);

    parallel_for(B, [&](int bi) {
        const Tensor& f0 = *latents[size_t(bi)];
        uint64_t draw_base = uint64_t(step_index) * 65536 + uint64_t(bi);

        int t = 1 + int(CounterRng::mix(seed, rng_stream::train_timestep, draw_base) %
                        uint64_t(schedule.total_steps));
        bool dropped = caption_dropout(seed, step_index, bi, dropout_p);
        rec.dropped[size_t(bi)] = dropped ? 1 : 0;

        uint64_t noise_seed = CounterRng::mix(seed, rng_stream::train_noise, draw_base);
        Tensor noise = gaussian_tensor(f0.c, f0.h, f0.w, noise_seed, rng_stream::train_noise, 0);
        Tensor f_t = forward_noise(schedule, f0, t, noise);

        std::vector<int> ids =
            dropped ? std::vector<int>{0} : caption_token_ids(dn.embedder, captions[size_t(bi)]);
        Tensor tokens = embed_tokens(dn.embedder, store, ids);

        Tensor sin_emb = sinusoidal_time_embedding(t, dn.time_dim);
        AuxInputs mlp_aux;
        ForwardTrace mlp_trace;
        Tensor emb = forward(dn.time_mlp, store, sin_emb, mlp_aux, &mlp_trace);

        AuxInputs aux;
        aux.emb = &emb;
        aux.tokens = &tokens;
        ForwardTrace trace;
        Tensor pred = forward(dn.main, store, f_t, aux, &trace);

        Tensor grad(pred.c, pred.h, pred.w);
        double loss = 0.0;
        for (size_t i = 0; i < pred.size(); ++i) {
            float d = pred.data[i] - f0.data[i];
            loss += double(d) * d;
            grad.data[i] = 2.f * d;
        }
        losses[size_t(bi)] = loss;

        Gradients g = backward(dn.main, store, trace, grad, aux);
        Gradients g_mlp = backward(dn.time_mlp, store, mlp_trace, g.d_emb, mlp_aux);
        accumulate_grads(g.param_grads, g_mlp.param_grads);
        embed_tokens_backward(dn.embedder, store, ids, g.d_tokens, g.param_grads);
        grads[size_t(bi)] = std::move(g.param_grads);
    });

    std::map<std::string, Tensor> merged;
    for (int bi = 0; bi < B; ++bi) {
        accumulate_grads(merged, grads[size_t(bi)]);
        rec.loss += losses[size_t(bi)];
    }
    scale_grads(merged, 1.f / float(B));
    adam_step(store, merged, lr);
    rec.loss /= B;
    return rec;
}

}  // namespace uvga
