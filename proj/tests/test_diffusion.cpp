#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "uvga/diffusion.hpp"

using namespace uvga;

namespace {

Tensor const_tensor(int c, int h, int w, float v) {
    Tensor t(c, h, w);
    for (auto& x : t.data) x = v;
    return t;
}

Tensor random_latent(int c, int h, int w, uint64_t seed) {
    Tensor t(c, h, w);
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = oracle::unit_rand(seed, i);
    return t;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("schedule boundaries: alpha_bar(0)=1, alpha(0)=1, sigma(0)=0") {
    NoiseSchedule s = build_schedule(1000);
    CHECK(s.alpha_bar[0] == 1.f);
    CHECK(s.alpha(0) == 1.f);
    CHECK(s.sigma(0) == 0.f);
    CHECK(s.total_steps == 1000);
}

TEST_CASE("alpha^2 + sigma^2 = 1 for every timestep") {
    NoiseSchedule s = build_schedule(1000);
    for (int t = 0; t <= 1000; ++t) {
        float a = s.alpha(t), sig = s.sigma(t);
        CHECK(std::fabs(a * a + sig * sig - 1.f) < 1e-6f);
    }
}

TEST_CASE("terminal alpha_bar is near-pure noise and matches a scalar cumprod") {
    NoiseSchedule s = build_schedule(1000);
    CHECK(s.alpha_bar[1000] < 2e-2f);

    double abar = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * double(t - 1) / 999.0;
        abar *= 1.0 - beta;
        CHECK(oracle::rel_err(double(s.alpha_bar[size_t(t)]), abar) < 1e-5);
        CHECK(s.betas[size_t(t)] > 0.f);
        CHECK(s.betas[size_t(t)] < 1.f);
        if (t > 1) CHECK(s.betas[size_t(t)] > s.betas[size_t(t - 1)]);
        CHECK(s.alpha_bar[size_t(t)] < s.alpha_bar[size_t(t - 1)]);
    }
}

TEST_CASE("schedule rejects T < 2") {
    CHECK_THROWS_AS(build_schedule(1), std::invalid_argument);
}

TEST_CASE("forward_noise at t=0 returns the clean sample") {
    NoiseSchedule s = build_schedule(100);
    Tensor x0 = random_latent(2, 3, 3, 1);
    Tensor e = random_latent(2, 3, 3, 2);
    Tensor xt = forward_noise(s, x0, 0, e);
    CHECK(xt.data == x0.data);
}

TEST_CASE("forward_noise of a zero sample is sigma(t) * noise") {
    NoiseSchedule s = build_schedule(100);
    Tensor x0(2, 3, 3);
    Tensor e = random_latent(2, 3, 3, 3);
    Tensor xt = forward_noise(s, x0, 40, e);
    for (size_t i = 0; i < xt.size(); ++i)
        CHECK(xt.data[i] == doctest::Approx(s.sigma(40) * e.data[i]));
}

TEST_CASE("forward_noise rejects out-of-range timesteps") {
    NoiseSchedule s = build_schedule(100);
    Tensor x0(1, 2, 2), e(1, 2, 2);
    CHECK_THROWS_AS(forward_noise(s, x0, -1, e), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(s, x0, 101, e), std::invalid_argument);
}

TEST_CASE("forward_noise variance matches sigma(t)^2 over many draws") {
    NoiseSchedule s = build_schedule(1000);
    const int t = 600;
    const int n = 10000;
    CounterRng rng(7, 1);
    double mean = 0, m2 = 0;
    float f0 = 0.8f;
    for (int i = 0; i < n; ++i) {
        Tensor x0(1, 1, 1), e(1, 1, 1);
        x0[0] = f0;
        e[0] = rng.next_normal();
        float v = forward_noise(s, x0, t, e)[0];
        mean += v;
        m2 += double(v) * v;
    }
    mean /= n;
    double var = m2 / n - mean * mean;
    CHECK(std::fabs(mean - double(s.alpha(t)) * f0) < 0.03);
    CHECK(oracle::rel_err(var, double(s.sigma(t)) * s.sigma(t)) < 0.03);
}

TEST_CASE("guided_x0 with w=0 is exactly the unconditional prediction") {
    Tensor uncond = const_tensor(2, 2, 2, 0.37f);
    Tensor cond = const_tensor(2, 2, 2, 0.91f);
    X0Predictor pred = [&](const Tensor&, int, const Tensor* tok) {
        return tok ? cond : uncond;
    };
    Tensor tokens(1, 4, 1);
    Tensor out = guided_x0(pred, Tensor(2, 2, 2), 10, &tokens, 0.f);
    CHECK(out.data == uncond.data);
}

TEST_CASE("guided_x0 with w=1 is exactly the conditional prediction") {
    Tensor uncond = const_tensor(2, 2, 2, 0.37f);
    Tensor cond = const_tensor(2, 2, 2, 0.91f);
    X0Predictor pred = [&](const Tensor&, int, const Tensor* tok) {
        return tok ? cond : uncond;
    };
    Tensor tokens(1, 4, 1);
    Tensor out = guided_x0(pred, Tensor(2, 2, 2), 10, &tokens, 1.f);
    CHECK(out.data == cond.data);
}

TEST_CASE("guided_x0 constant-net closed form a + w(b-a)") {
    const float a = 0.25f, b = -0.5f, w = 3.f;
    X0Predictor pred = [&](const Tensor& x, int, const Tensor* tok) {
        return const_tensor(x.c, x.h, x.w, tok ? b : a);
    };
    Tensor tokens(1, 4, 1);
    Tensor out = guided_x0(pred, Tensor(1, 2, 2), 5, &tokens, w);
    for (float v : out.data) CHECK(v == a + w * (b - a));
}

TEST_CASE("guided_x0 is affine in w (three-point collinearity)") {
    X0Predictor pred = [&](const Tensor& x, int, const Tensor* tok) {
        Tensor out(x.c, x.h, x.w);
        for (size_t i = 0; i < out.size(); ++i)
            out.data[i] = tok ? oracle::unit_rand(20, i) : oracle::unit_rand(21, i);
        return out;
    };
    Tensor tokens(1, 4, 1);
    Tensor x(2, 3, 3);
    Tensor g0 = guided_x0(pred, x, 5, &tokens, 0.5f);
    Tensor g1 = guided_x0(pred, x, 5, &tokens, 2.f);
    Tensor g2 = guided_x0(pred, x, 5, &tokens, 3.5f);
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(std::fabs(0.5f * (g0.data[i] + g2.data[i]) - g1.data[i]) < 1e-6f);
}

TEST_CASE("guided_x0 applies the optional clamp") {
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) {
        return const_tensor(x.c, x.h, x.w, 5.f);
    };
    Tensor out = guided_x0(pred, Tensor(1, 2, 2), 5, nullptr, 0.f, 2.f);
    for (float v : out.data) CHECK(v == 2.f);
}

TEST_CASE("guided_x0 rejects negative weights") {
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) { return x; };
    CHECK_THROWS_AS(guided_x0(pred, Tensor(1, 1, 1), 5, nullptr, -1.f), std::invalid_argument);
}

TEST_CASE("sample_timesteps covers T down to 1 with uniform stride") {
    std::vector<int> ts = sample_timesteps(1000, 100);
    CHECK(ts.size() == 100);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() == 1);
    for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);

    std::vector<int> full = sample_timesteps(50, 50);
    for (int i = 0; i < 50; ++i) CHECK(full[size_t(i)] == 50 - i);
}

TEST_CASE("constant-oracle sampling returns the constant exactly") {
    NoiseSchedule s = build_schedule(1000);
    Tensor f = random_latent(4, 8, 8, 31);
    X0Predictor pred = [&](const Tensor&, int, const Tensor*) { return f; };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 100;
    Tensor out = sample(pred, s, nullptr, g, 7, 4, 8, 8);
    float max_diff = 0.f;
    for (size_t i = 0; i < out.size(); ++i)
        max_diff = std::max(max_diff, std::fabs(out.data[i] - f.data[i]));
    CHECK(max_diff < 1e-4f);  // the final step fully weights x0_hat
}

TEST_CASE("oracle recovery within 1e-3 for 10 seeds") {
    NoiseSchedule s = build_schedule(1000);
    Tensor f = random_latent(4, 8, 8, 77);
    X0Predictor pred = [&](const Tensor&, int, const Tensor*) { return f; };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 100;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Tensor out = sample(pred, s, nullptr, g, seed, 4, 8, 8);
        float max_diff = 0.f;
        for (size_t i = 0; i < out.size(); ++i)
            max_diff = std::max(max_diff, std::fabs(out.data[i] - f.data[i]));
        CHECK(max_diff < 1e-3f);
    }
}

TEST_CASE("same seed gives bit-identical samples") {
    NoiseSchedule s = build_schedule(500);
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) {
        Tensor out = x;
        out *= 0.5f;
        return out;
    };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 50;
    Tensor a = sample(pred, s, nullptr, g, 1234, 2, 4, 4);
    Tensor b = sample(pred, s, nullptr, g, 1234, 2, 4, 4);
    CHECK(a.data == b.data);
    Tensor c = sample(pred, s, nullptr, g, 1235, 2, 4, 4);
    CHECK(c.data != a.data);
}

TEST_CASE("inpainting with an all-zero mask returns the background exactly") {
    NoiseSchedule s = build_schedule(200);
    Tensor bg = random_latent(3, 4, 4, 5);
    Tensor mask(1, 4, 4);  // all zero
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) { return x; };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 20;
    Tensor out = inpaint_sample(pred, s, bg, mask, nullptr, g, 3);
    CHECK(out.data == bg.data);
}

TEST_CASE("inpainting with an all-one mask reproduces sample() bit-for-bit") {
    NoiseSchedule s = build_schedule(200);
    Tensor bg = random_latent(3, 4, 4, 6);
    Tensor mask = const_tensor(1, 4, 4, 1.f);
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) {
        Tensor out = x;
        out *= 0.3f;
        return out;
    };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 25;
    Tensor via_inpaint = inpaint_sample(pred, s, bg, mask, nullptr, g, 99);
    Tensor via_sample = sample(pred, s, nullptr, g, 99, 3, 4, 4);
    CHECK(via_inpaint.data == via_sample.data);
}

TEST_CASE("outside-mask latent texels equal the background bit-for-bit") {
    NoiseSchedule s = build_schedule(200);
    Tensor bg = random_latent(3, 4, 4, 8);
    Tensor mask(1, 4, 4);
    mask.at(0, 1, 1) = 1.f;
    mask.at(0, 2, 3) = 1.f;
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) {
        Tensor out = x;
        out *= 0.3f;
        return out;
    };
    GuidanceConfig g;
    g.w = 0.f;
    g.sample_steps = 20;
    Tensor out = inpaint_sample(pred, s, bg, mask, nullptr, g, 4);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                if (mask.at(0, y, x) != 0.f) continue;
                CHECK(out.at(c, y, x) == bg.at(c, y, x));
            }
}

TEST_CASE("inpaint rejects mismatched mask shapes") {
    NoiseSchedule s = build_schedule(100);
    Tensor bg(3, 4, 4), mask(1, 3, 4);
    X0Predictor pred = [&](const Tensor& x, int, const Tensor*) { return x; };
    CHECK_THROWS_AS(inpaint_sample(pred, s, bg, mask, nullptr, GuidanceConfig{}, 0),
                    std::invalid_argument);
}

TEST_CASE("gaussian_tensor draws are standard-normal-ish and replayable") {
    Tensor a = gaussian_tensor(4, 8, 8, 9, rng_stream::sample_init, 0);
    Tensor b = gaussian_tensor(4, 8, 8, 9, rng_stream::sample_init, 0);
    CHECK(a.data == b.data);
    double mean = 0, m2 = 0;
    for (float v : a.data) {
        mean += v;
        m2 += double(v) * v;
    }
    mean /= double(a.size());
    double var = m2 / double(a.size()) - mean * mean;
    CHECK(std::fabs(mean) < 0.2);
    CHECK(std::fabs(var - 1.0) < 0.3);
}

}  // TEST_SUITE
