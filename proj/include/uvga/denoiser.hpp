#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uvga/diffusion.hpp"
#include "uvga/nn.hpp"

namespace uvga {

// Closed-vocabulary text embedder standing in for a pretrained encoder.
// Token ids: 0 = null condition, 1 = unknown word, 2.. = grammar words.
struct TextEmbedder {
    std::vector<std::string> vocab;
    int dim = 64;
    int max_tokens = 16;

    int vocab_size() const { return int(vocab.size()); }
    int word_index(const std::string& word) const;
};

TextEmbedder make_text_embedder();

// Lowercases, splits on whitespace/punctuation, maps unknown words to the
// unknown token, truncates to max_tokens. A null caption yields the single
// null token.
std::vector<int> caption_token_ids(const TextEmbedder& e, const std::optional<std::string>& caption);

// Embedding rows for the ids, (n_tokens, dim). Table lives in the store
// under "embed.table".
Tensor embed_tokens(const TextEmbedder& e, const ParamStore& store, const std::vector<int>& ids);

void embed_tokens_backward(const TextEmbedder& e, const ParamStore& store,
                           const std::vector<int>& ids, const Tensor& d_tokens,
                           std::map<std::string, Tensor>& grads);

// Conditional x0-prediction denoiser: conv in, two FiLM residual blocks,
// avgpool, cross-attention over text tokens at the bottleneck, two more
// residual blocks, upsample with skip, zero-initialized output conv.
struct DenoiserNet {
    int latent_channels = 8;
    int width = 32;
    int heads = 4;
    int time_dim = 64;
    int total_steps = 1000;
    Net main;
    Net time_mlp;
    TextEmbedder embedder;
};

DenoiserNet make_denoiser(int latent_channels, int total_steps);

void init_denoiser_params(const DenoiserNet& dn, ParamStore& store, int latent_h, int latent_w,
                          uint64_t seed);

Tensor sinusoidal_time_embedding(int t, int dim);

// nullptr cond_tokens means the null condition. Throws std::invalid_argument
// for t outside [1, T].
Tensor predict_x0(const DenoiserNet& dn, const ParamStore& store, const Tensor& f_t, int t,
                  const Tensor* cond_tokens);

// Adapter for the diffusion sampler. The returned callable references dn
// and store; both must outlive it.
X0Predictor make_predictor(const DenoiserNet& dn, const ParamStore& store);

// Deterministic function of (seed, step, sample): replayable dropout.
bool caption_dropout(uint64_t seed, int64_t step, int sample, float p);

struct DenoiserStepRecord {
    double loss = 0;                // mean of per-sample squared residuals
    std::vector<uint8_t> dropped;   // per-sample dropout decisions
};

DenoiserStepRecord train_denoiser_step(const DenoiserNet& dn, ParamStore& store,
                                       const NoiseSchedule& schedule,
                                       const std::vector<const Tensor*>& latents,
                                       const std::vector<std::string>& captions, float lr,
                                       float dropout_p, int64_t step_index, uint64_t seed);

}  // namespace uvga
