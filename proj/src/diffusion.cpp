#include "uvga/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "uvga/rng.hpp"
#include "uvga/vecmath.hpp"

namespace uvga {

NoiseSchedule build_schedule(int total_steps) {
    if (total_steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.betas.assign(size_t(total_steps) + 1, 0.f);
    s.alpha_bar.assign(size_t(total_steps) + 1, 0.f);

    const double beta_start = 1e-4, beta_end = 0.02;
    double abar = 1.0;
    s.alpha_bar[0] = 1.f;
    for (int t = 1; t <= total_steps; ++t) {
        double beta = beta_start + (beta_end - beta_start) * double(t - 1) / double(total_steps - 1);
        abar *= 1.0 - beta;
        s.betas[size_t(t)] = float(beta);
        s.alpha_bar[size_t(t)] = float(abar);
    }
    return s;
}

PosteriorCoefs posterior_coefs(const NoiseSchedule& s, int t, int t_prev) {
    if (t_prev < 0 || t_prev >= t || t > s.total_steps)
        throw std::invalid_argument("posterior requires 0 <= t_prev < t <= T");
    double abar_t = double(s.alpha_bar[size_t(t)]);
    double abar_s = double(s.alpha_bar[size_t(t_prev)]);
    double alpha_ts = abar_t / abar_s;           // product of alphas over (s, t]
    double one_minus_t = 1.0 - abar_t;

    PosteriorCoefs c;
    c.coef_x0 = float(std::sqrt(abar_s) * (1.0 - alpha_ts) / one_minus_t);
    c.coef_xt = float(std::sqrt(alpha_ts) * (1.0 - abar_s) / one_minus_t);
    double var = (1.0 - abar_s) * (1.0 - alpha_ts) / one_minus_t;
    c.stddev = float(std::sqrt(std::max(0.0, var)));
    return c;
}

Tensor forward_noise(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& noise) {
    if (t < 0 || t > s.total_steps)
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, T]");
    if (!noise.same_shape(x0)) throw std::invalid_argument("noise shape does not match sample");
    float a = s.alpha(t), sig = s.sigma(t);
    Tensor out(x0.c, x0.h, x0.w);
    for (size_t i = 0; i < x0.size(); ++i) out.data[i] = a * x0.data[i] + sig * noise.data[i];
    return out;
}

std::vector<int> sample_timesteps(int total_steps, int sample_steps) {
    if (sample_steps < 1 || sample_steps > total_steps)
        throw std::invalid_argument("sample_steps must be in [1, T]");
    std::vector<int> ts(size_t(sample_steps), 0);
    if (sample_steps == 1) {
        ts[0] = total_steps;
        return ts;
    }
    double stride = double(total_steps - 1) / double(sample_steps - 1);
    for (int k = 0; k < sample_steps; ++k)
        ts[size_t(k)] = int(std::lround(double(total_steps) - stride * k));
    return ts;
}

Tensor guided_x0(const X0Predictor& predict, const Tensor& x_t, int t, const Tensor* cond_tokens,
                 float w, std::optional<float> x0_clamp) {
    if (w < 0.f) throw std::invalid_argument("guidance weight must be >= 0");
    Tensor out;
    if (cond_tokens == nullptr || w == 0.f) {
        out = predict(x_t, t, nullptr);
    } else if (w == 1.f) {
        out = predict(x_t, t, cond_tokens);
    } else {
        Tensor uncond = predict(x_t, t, nullptr);
        Tensor cond = predict(x_t, t, cond_tokens);
        out = uncond;
        for (size_t i = 0; i < out.size(); ++i)
            out.data[i] += w * (cond.data[i] - uncond.data[i]);
    }
    if (x0_clamp) {
        float b = *x0_clamp;
        for (auto& v : out.data) v = clampf(v, -b, b);
    }
    return out;
}

Tensor gaussian_tensor(int c, int h, int w, uint64_t seed, uint64_t stream, uint64_t counter_base) {
    CounterRng rng(seed, stream);
    rng.set_counter(counter_base);
    Tensor t(c, h, w);
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

namespace {

Tensor denoise_loop(const X0Predictor& predict, const NoiseSchedule& schedule,
                    const Tensor* cond_tokens, const GuidanceConfig& guidance, uint64_t seed,
                    const Tensor* l_bg, const Tensor* mask_fg, int c, int h, int w) {
    std::vector<int> ts = sample_timesteps(schedule.total_steps, guidance.sample_steps);
    Tensor x = gaussian_tensor(c, h, w, seed, rng_stream::sample_init, 0);

    CounterRng step_rng(seed, rng_stream::sample_step);
    CounterRng bg_rng(seed, rng_stream::inpaint_bg);

    for (size_t k = 0; k < ts.size(); ++k) {
        int t = ts[k];
        int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;

        Tensor x0_hat = guided_x0(predict, x, t, cond_tokens, guidance.w, guidance.x0_clamp);
        PosteriorCoefs pc = posterior_coefs(schedule, t, t_prev);

        Tensor next(c, h, w);
        for (size_t i = 0; i < next.size(); ++i)
            next.data[i] = pc.coef_x0 * x0_hat.data[i] + pc.coef_xt * x.data[i];
        if (t_prev > 0 && pc.stddev > 0.f)
            for (auto& v : next.data) v += pc.stddev * step_rng.next_normal();

        if (l_bg) {
            if (t_prev > 0) {
                float a = schedule.alpha(t_prev), sig = schedule.sigma(t_prev);
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        bool fg = mask_fg->at(0, y, xx) != 0.f;
                        for (int ch = 0; ch < c; ++ch) {
                            float bg_noise = bg_rng.next_normal();
                            if (!fg)
                                next.at(ch, y, xx) = a * l_bg->at(ch, y, xx) + sig * bg_noise;
                        }
                    }
                }
            } else {
                // Final blend with the clean background: outside-mask texels
                // are bit-exact copies.
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        if (mask_fg->at(0, y, xx) == 0.f)
                            for (int ch = 0; ch < c; ++ch) next.at(ch, y, xx) = l_bg->at(ch, y, xx);
            }
        }
        x = std::move(next);
    }
    return x;
}

}  // namespace

Tensor sample(const X0Predictor& predict, const NoiseSchedule& schedule, const Tensor* cond_tokens,
              const GuidanceConfig& guidance, uint64_t seed, int latent_c, int latent_h,
              int latent_w) {
    return denoise_loop(predict, schedule, cond_tokens, guidance, seed, nullptr, nullptr, latent_c,
                        latent_h, latent_w);
}

Tensor inpaint_sample(const X0Predictor& predict, const NoiseSchedule& schedule, const Tensor& l_bg,
                      const Tensor& mask_fg, const Tensor* cond_tokens,
                      const GuidanceConfig& guidance, uint64_t seed) {
    if (mask_fg.h != l_bg.h || mask_fg.w != l_bg.w || mask_fg.c != 1)
        throw std::invalid_argument("mask shape does not match latent spatial dims");
    return denoise_loop(predict, schedule, cond_tokens, guidance, seed, &l_bg, &mask_fg, l_bg.c,
                        l_bg.h, l_bg.w);
}

}  // namespace uvga
