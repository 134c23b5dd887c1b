#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "uvga/tensor.hpp"

namespace uvga {

// DDPM noise schedule. Index 0 is the clean-sample boundary
// (alpha_bar[0] = 1); betas[t] is defined for t in [1, T].
struct NoiseSchedule {
    int total_steps = 0;
    std::vector<float> betas;      // size T+1, [0] unused
    std::vector<float> alpha_bar;  // size T+1, strictly decreasing from 1

    float alpha(int t) const { return std::sqrt(alpha_bar[size_t(t)]); }
    float sigma(int t) const { return std::sqrt(1.f - alpha_bar[size_t(t)]); }
};

// Posterior q(x_s | x_t, x0) coefficients for a jump t -> s (s < t).
struct PosteriorCoefs {
    float coef_x0 = 0.f;
    float coef_xt = 0.f;
    float stddev = 0.f;
};

struct GuidanceConfig {
    float w = 3.f;
    int sample_steps = 100;
    std::optional<float> x0_clamp;
};

// Denoiser hook: predicts x0 from (x_t, t) under optional condition tokens
// (nullptr means the null condition).
using X0Predictor = std::function<Tensor(const Tensor& x_t, int t, const Tensor* cond_tokens)>;

// Linear betas 1e-4 .. 0.02, derived tables computed in float64.
NoiseSchedule build_schedule(int total_steps = 1000);

PosteriorCoefs posterior_coefs(const NoiseSchedule& s, int t, int t_prev);

// x_t = alpha(t) x0 + sigma(t) e. Accepts t in [0, T]; t = 0 returns x0.
Tensor forward_noise(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& noise);

// Uniform-stride timestep subsequence from T down to 1 (inclusive).
std::vector<int> sample_timesteps(int total_steps, int sample_steps);

// Classifier-free guidance: uncond + w * (cond - uncond). w = 0 and w = 1
// return the single matching prediction exactly.
Tensor guided_x0(const X0Predictor& predict, const Tensor& x_t, int t, const Tensor* cond_tokens,
                 float w, std::optional<float> x0_clamp = std::nullopt);

// Ancestral x0-parameterized DDPM sampling. Bit-reproducible for a given
// seed (counter-based noise streams).
Tensor sample(const X0Predictor& predict, const NoiseSchedule& schedule, const Tensor* cond_tokens,
              const GuidanceConfig& guidance, uint64_t seed, int latent_c, int latent_h,
              int latent_w);

// Blended-latent inpainting: the foreground evolves under the guided
// sampler while masked-out texels track a freshly noised background; the
// final step blends the clean background back in, so outside-mask texels
// equal l_bg exactly. mask_fg is (1, h, w) with 0/1 entries.
Tensor inpaint_sample(const X0Predictor& predict, const NoiseSchedule& schedule, const Tensor& l_bg,
                      const Tensor& mask_fg, const Tensor* cond_tokens,
                      const GuidanceConfig& guidance, uint64_t seed);

// Fills a tensor with unit normals from the given counter stream.
Tensor gaussian_tensor(int c, int h, int w, uint64_t seed, uint64_t stream, uint64_t counter_base);

}  // namespace uvga
