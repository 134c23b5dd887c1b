#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "uvga/denoiser.hpp"
#include "uvga/diffusion.hpp"
#include "uvga/rng.hpp"

using namespace uvga;

namespace {

Tensor random_latent(int c, int h, int w, uint64_t seed) {
    Tensor t(c, h, w);
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = oracle::unit_rand(seed, i);
    return t;
}

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("a null caption embeds as the single null token") {
    DenoiserNet dn = make_denoiser(8, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 16, 16, 1);

    std::vector<int> ids = caption_token_ids(dn.embedder, std::nullopt);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == 0);

    Tensor emb = embed_tokens(dn.embedder, store, ids);
    CHECK(emb.c == 1);
    CHECK(emb.h == dn.embedder.dim);
    const Tensor& table = store.at("embed.table");
    for (int d = 0; d < dn.embedder.dim; ++d) CHECK(emb.at2(0, d) == table.at2(0, d));
}

TEST_CASE("known words tokenize in order of appearance") {
    TextEmbedder e = make_text_embedder();
    std::vector<int> ids = caption_token_ids(e, std::string("red shirt, blue pants"));
    REQUIRE(ids.size() == 4);
    CHECK(e.vocab[size_t(ids[0])] == "red");
    CHECK(e.vocab[size_t(ids[1])] == "shirt");
    CHECK(e.vocab[size_t(ids[2])] == "blue");
    CHECK(e.vocab[size_t(ids[3])] == "pants");
}

TEST_CASE("unknown words map to the unknown token") {
    TextEmbedder e = make_text_embedder();
    std::vector<int> ids = caption_token_ids(e, std::string("zorp shirt"));
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == 1);
    CHECK(e.vocab[size_t(ids[1])] == "shirt");
}

TEST_CASE("long captions truncate to max_tokens") {
    TextEmbedder e = make_text_embedder();
    std::string caption;
    for (int i = 0; i < 20; ++i) caption += "red ";
    std::vector<int> ids = caption_token_ids(e, caption);
    CHECK(int(ids.size()) == e.max_tokens);
}

TEST_CASE("tokenization lowercases and splits punctuation") {
    TextEmbedder e = make_text_embedder();
    std::vector<int> a = caption_token_ids(e, std::string("RED,shirt!"));
    std::vector<int> b = caption_token_ids(e, std::string("red shirt"));
    CHECK(a == b);
}

TEST_CASE("zero-initialized denoiser predicts zero for any input") {
    DenoiserNet dn = make_denoiser(8, 1000);
    ParamStore store;
    init_denoiser_params(dn, store, 16, 16, 2);
    Tensor f_t = random_latent(8, 16, 16, 5);
    Tensor out = predict_x0(dn, store, f_t, 500, nullptr);
    for (float v : out.data) CHECK(v == 0.f);
}

TEST_CASE("predict_x0 is deterministic") {
    DenoiserNet dn = make_denoiser(8, 1000);
    ParamStore store;
    init_denoiser_params(dn, store, 16, 16, 3);
    Tensor f_t = random_latent(8, 16, 16, 6);
    Tensor tokens = embed_tokens(dn.embedder, store, caption_token_ids(dn.embedder, std::string("a red shirt")));
    Tensor a = predict_x0(dn, store, f_t, 321, &tokens);
    Tensor b = predict_x0(dn, store, f_t, 321, &tokens);
    CHECK(a.data == b.data);
}

TEST_CASE("predict_x0 validates the timestep range") {
    DenoiserNet dn = make_denoiser(8, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 16, 16, 4);
    Tensor f_t(8, 16, 16);
    CHECK_THROWS_AS(predict_x0(dn, store, f_t, 0, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(predict_x0(dn, store, f_t, 101, nullptr), std::invalid_argument);
    CHECK_NOTHROW(predict_x0(dn, store, f_t, 100, nullptr));
}

TEST_CASE("predict_x0 output stays finite for extreme inputs") {
    DenoiserNet dn = make_denoiser(8, 1000);
    ParamStore store;
    init_denoiser_params(dn, store, 16, 16, 5);
    Tensor f_t(8, 16, 16);
    for (size_t i = 0; i < f_t.size(); ++i) f_t.data[i] = (i % 2 ? 50.f : -50.f);
    Tensor out = predict_x0(dn, store, f_t, 1000, nullptr);
    CHECK(out.all_finite());
    out = predict_x0(dn, store, f_t, 1, nullptr);
    CHECK(out.all_finite());
}

TEST_CASE("zero-init training loss equals mean ||f0||^2 exactly") {
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 6);
    NoiseSchedule schedule = build_schedule(100);

    std::vector<Tensor> latents;
    for (int i = 0; i < 3; ++i) latents.push_back(random_latent(4, 8, 8, 100 + uint64_t(i)));
    std::vector<const Tensor*> ptrs;
    std::vector<std::string> captions;
    for (const auto& l : latents) {
        ptrs.push_back(&l);
        captions.push_back("a red shirt");
    }

    double expected = 0;
    for (const auto& l : latents) expected += sum_squares(l);
    expected /= double(latents.size());

    DenoiserStepRecord rec = train_denoiser_step(dn, store, schedule, ptrs, captions, 1e-4f, 0.2f, 0, 9);
    CHECK(rec.loss == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("perfect-prediction batches have zero loss") {
    // Zero latents make the zero-initialized net a perfect oracle.
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 7);
    NoiseSchedule schedule = build_schedule(100);
    Tensor zero(4, 8, 8);
    std::vector<const Tensor*> ptrs{&zero, &zero};
    std::vector<std::string> captions{"a red shirt", "a blue shirt"};
    DenoiserStepRecord rec = train_denoiser_step(dn, store, schedule, ptrs, captions, 0.f, 0.2f, 0, 9);
    CHECK(rec.loss == 0.0);
}

TEST_CASE("caption dropout decisions are replayable and match the step log") {
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 8);
    NoiseSchedule schedule = build_schedule(100);
    Tensor l = random_latent(4, 8, 8, 200);
    std::vector<const Tensor*> ptrs(8, &l);
    std::vector<std::string> captions(8, "a red shirt");

    const uint64_t seed = 77;
    for (int64_t step = 0; step < 3; ++step) {
        DenoiserStepRecord rec =
            train_denoiser_step(dn, store, schedule, ptrs, captions, 1e-4f, 0.2f, step, seed);
        for (int i = 0; i < 8; ++i)
            CHECK(rec.dropped[size_t(i)] == (caption_dropout(seed, step, i, 0.2f) ? 1 : 0));
    }
}

TEST_CASE("dropout rate over a 10000-step log is 0.2 within 0.01") {
    const uint64_t seed = 31337;
    const int batch = 16;
    int64_t hits = 0, total = 0;
    for (int64_t step = 0; step < 10000; ++step)
        for (int i = 0; i < batch; ++i) {
            hits += caption_dropout(seed, step, i, 0.2f) ? 1 : 0;
            ++total;
        }
    double rate = double(hits) / double(total);
    CHECK(std::fabs(rate - 0.2) <= 0.01);
}

TEST_CASE("training loss decreases on a small dataset") {
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 10);
    NoiseSchedule schedule = build_schedule(100);

    std::vector<Tensor> latents;
    for (int i = 0; i < 8; ++i) latents.push_back(random_latent(4, 8, 8, 300 + uint64_t(i)));
    std::vector<std::string> caption_pool = {"a red shirt", "a blue shirt", "a green shirt",
                                             "a white shirt", "red pants",   "blue pants",
                                             "green pants",   "white pants"};

    double early = 0, late = 0;
    const int steps = 240;
    for (int64_t step = 0; step < steps; ++step) {
        std::vector<const Tensor*> ptrs;
        std::vector<std::string> captions;
        for (int b = 0; b < 4; ++b) {
            size_t i = size_t(CounterRng::mix(5, 6, uint64_t(step) * 8 + b) % latents.size());
            ptrs.push_back(&latents[i]);
            captions.push_back(caption_pool[i]);
        }
        DenoiserStepRecord rec =
            train_denoiser_step(dn, store, schedule, ptrs, captions, 2e-3f, 0.2f, step, 11);
        if (step < 40) early += rec.loss;
        if (step >= steps - 40) late += rec.loss;
    }
    CHECK(late < 0.7 * early);
}

TEST_CASE("trained net predicts better from near-clean inputs (SNR monotonicity)") {
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 21);
    NoiseSchedule schedule = build_schedule(100);

    std::vector<Tensor> latents;
    for (int i = 0; i < 8; ++i) latents.push_back(random_latent(4, 8, 8, 500 + uint64_t(i)));
    for (int64_t step = 0; step < 220; ++step) {
        std::vector<const Tensor*> ptrs;
        std::vector<std::string> captions;
        for (int b = 0; b < 4; ++b) {
            size_t i = size_t(CounterRng::mix(9, 6, uint64_t(step) * 8 + b) % latents.size());
            ptrs.push_back(&latents[i]);
            captions.push_back("a red shirt");
        }
        train_denoiser_step(dn, store, schedule, ptrs, captions, 2e-3f, 0.2f, step, 15);
    }

    // Held-out latents: error at t=1 must beat error at t=T on average.
    double err_low = 0, err_high = 0;
    for (int i = 0; i < 32; ++i) {
        Tensor f0 = random_latent(4, 8, 8, 900 + uint64_t(i));
        Tensor noise = gaussian_tensor(4, 8, 8, 33 + uint64_t(i), rng_stream::train_noise, 0);
        Tensor f_low = forward_noise(schedule, f0, 1, noise);
        Tensor f_high = forward_noise(schedule, f0, 100, noise);
        Tensor p_low = predict_x0(dn, store, f_low, 1, nullptr);
        Tensor p_high = predict_x0(dn, store, f_high, 100, nullptr);
        for (size_t j = 0; j < f0.size(); ++j) {
            err_low += std::fabs(double(p_low.data[j]) - f0.data[j]);
            err_high += std::fabs(double(p_high.data[j]) - f0.data[j]);
        }
    }
    CHECK(err_low < err_high);
}

TEST_CASE("conditioning moves the prediction after a few steps") {
    // After training on latents correlated with their captions, the
    // conditional and null predictions must differ.
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 12);
    NoiseSchedule schedule = build_schedule(100);

    Tensor red = random_latent(4, 8, 8, 400);
    Tensor blue = random_latent(4, 8, 8, 401);
    for (int64_t step = 0; step < 60; ++step) {
        std::vector<const Tensor*> ptrs{&red, &blue};
        std::vector<std::string> captions{"a red shirt", "a blue shirt"};
        train_denoiser_step(dn, store, schedule, ptrs, captions, 3e-3f, 0.2f, step, 13);
    }

    Tensor f_t = random_latent(4, 8, 8, 402);
    Tensor red_tokens =
        embed_tokens(dn.embedder, store, caption_token_ids(dn.embedder, std::string("a red shirt")));
    Tensor no_cond = predict_x0(dn, store, f_t, 50, nullptr);
    Tensor with_cond = predict_x0(dn, store, f_t, 50, &red_tokens);
    double diff = 0;
    for (size_t i = 0; i < no_cond.size(); ++i)
        diff += std::fabs(double(no_cond.data[i]) - with_cond.data[i]);
    CHECK(diff > 1e-3);
}

}  // TEST_SUITE
