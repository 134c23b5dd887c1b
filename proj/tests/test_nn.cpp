#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "support/shadow_net.hpp"
#include "uvga/denoiser.hpp"
#include "uvga/nn.hpp"

using namespace uvga;

namespace {

Tensor random_tensor(int c, int h, int w, uint64_t seed) {
    Tensor t(c, h, w);
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = oracle::unit_rand(seed, i);
    return t;
}

LayerSpec make_layer(LayerKind kind, const std::string& name, int in = 0, int out = 0) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    l.in_ch = in;
    l.out_ch = out;
    return l;
}

// Loss sum(weights .* shadow_forward(...)), float64 throughout.
double weighted_forward(const Net& net, const ParamStore& store, const Tensor& input,
                        const AuxInputs& aux, const Tensor& weights) {
    oracle::DTensor out = oracle::shadow_forward(net, store, input, aux);
    double acc = 0;
    for (size_t i = 0; i < out.d.size(); ++i) acc += out.d[i] * double(weights.data[i]);
    return acc;
}

// FD-checks every parameter of the net plus the input.
void fd_check_net(Net& net, ParamStore& store, Tensor input, AuxInputs aux, int out_c, int out_h,
                  int out_w, double tol, int max_slots_per_tensor = 6) {
    Tensor weights = random_tensor(out_c, out_h, out_w, 4242);

    ForwardTrace trace;
    forward(net, store, input, aux, &trace);
    Gradients g = backward(net, store, trace, weights, aux);

    double max_rel = 0;
    int checked = 0;
    auto probe = [&](float& slot, double analytic) {
        double fd = oracle::central_diff(
            slot, 1e-3, [&]() { return weighted_forward(net, store, input, aux, weights); });
        if (std::fabs(fd) < 1e-6 && std::fabs(analytic) < 1e-6) return;
        max_rel = std::max(max_rel, oracle::rel_err(analytic, fd));
        ++checked;
    };

    for (auto& [name, param] : store.params) {
        auto git = g.param_grads.find(name);
        if (git == g.param_grads.end()) continue;
        size_t stride = std::max<size_t>(1, param.size() / size_t(max_slots_per_tensor));
        for (size_t i = 0; i < param.size(); i += stride) probe(param.data[i], git->second.data[i]);
    }
    size_t stride = std::max<size_t>(1, input.size() / size_t(max_slots_per_tensor));
    for (size_t i = 0; i < input.size(); i += stride) probe(input.data[i], g.d_input.data[i]);

    CHECK(checked > 0);
    CHECK(max_rel < tol);
}

}  // namespace

TEST_SUITE("neural_core") {

TEST_CASE("conv3x3 with an identity kernel passes the input through") {
    Net net{{make_layer(LayerKind::conv3x3, "c", 1, 1)}};
    ParamStore store;
    build_params(net, store, 1, 5, 5, 1);
    Tensor& w = store.at("c.w");
    for (auto& v : w.data) v = 0.f;
    w.data[4] = 1.f;  // kernel center

    Tensor in = random_tensor(1, 5, 5, 7);
    Tensor out = forward(net, store, in, {});
    for (size_t i = 0; i < in.size(); ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("cross_attention with one token returns its value projection everywhere") {
    LayerSpec attn = make_layer(LayerKind::cross_attention, "a", 8, 8);
    attn.heads = 2;
    attn.cond_dim = 6;
    Net net{{attn}};
    ParamStore store;
    build_params(net, store, 8, 3, 3, 2);

    Tensor x = random_tensor(8, 3, 3, 11);
    Tensor tokens = random_tensor(1, 6, 1, 12);
    AuxInputs aux;
    aux.tokens = &tokens;
    Tensor out = forward(net, store, x, aux);

    const Tensor& wv = store.at("a.wv");
    for (int c = 0; c < 8; ++c) {
        float want = 0.f;
        for (int e = 0; e < 6; ++e) want += wv.at2(c, e) * tokens.at2(0, e);
        for (int y = 0; y < 3; ++y)
            for (int xx = 0; xx < 3; ++xx)
                CHECK(out.at(c, y, xx) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("two-layer net matches a scalar reference forward") {
    Net net{{make_layer(LayerKind::conv3x3, "c1", 2, 3), make_layer(LayerKind::silu, "s")}};
    ParamStore store;
    build_params(net, store, 2, 6, 6, 3);
    Tensor in = random_tensor(2, 6, 6, 9);
    Tensor out = forward(net, store, in, {});

    const Tensor& w = store.at("c1.w");
    const Tensor& b = store.at("c1.b");
    float max_diff = 0.f;
    for (int oc = 0; oc < 3; ++oc)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                double acc = b[size_t(oc)];
                for (int ic = 0; ic < 2; ++ic)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int yy = y + ky - 1, xx = x + kx - 1;
                            if (yy < 0 || yy >= 6 || xx < 0 || xx >= 6) continue;
                            acc += double(w.data[(size_t(oc) * 2 + ic) * 9 + ky * 3 + kx]) *
                                   in.at(ic, yy, xx);
                        }
                double want = acc / (1.0 + std::exp(-acc));
                max_diff = std::max(max_diff, std::fabs(float(want) - out.at(oc, y, x)));
            }
    CHECK(max_diff < 1e-5f);
}

TEST_CASE("backward with zero grad_out yields zero gradients") {
    Net net{{make_layer(LayerKind::conv3x3, "c", 2, 2), make_layer(LayerKind::silu, "s")}};
    ParamStore store;
    build_params(net, store, 2, 4, 4, 5);
    Tensor in = random_tensor(2, 4, 4, 1);
    ForwardTrace trace;
    forward(net, store, in, {}, &trace);
    Gradients g = backward(net, store, trace, Tensor(2, 4, 4), {});
    for (const auto& [name, grad] : g.param_grads)
        for (float v : grad.data) CHECK(v == 0.f);
    for (float v : g.d_input.data) CHECK(v == 0.f);
}

TEST_CASE("linear layer gradient has the closed form (Wx-y) x^T") {
    Net net{{make_layer(LayerKind::linear, "l", 3, 2)}};
    ParamStore store;
    build_params(net, store, 3, 1, 1, 8);
    Tensor x = random_tensor(3, 1, 1, 2);
    Tensor y = random_tensor(2, 1, 1, 3);

    ForwardTrace trace;
    Tensor out = forward(net, store, x, {}, &trace);
    Tensor grad_out(2, 1, 1);
    for (int i = 0; i < 2; ++i) grad_out[size_t(i)] = out[size_t(i)] - y[size_t(i)];
    Gradients g = backward(net, store, trace, grad_out, {});

    const Tensor& dw = g.param_grads.at("l.w");
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(dw.at2(i, j) == (out[size_t(i)] - y[size_t(i)]) * x[size_t(j)]);
}

TEST_CASE("missing forward trace is a state error") {
    Net net{{make_layer(LayerKind::silu, "s")}};
    ParamStore store;
    build_params(net, store, 2, 2, 2, 1);
    ForwardTrace empty;
    CHECK_THROWS_AS(backward(net, store, empty, Tensor(2, 2, 2), {}), std::logic_error);
}

TEST_CASE("shape mismatches name the offending layer") {
    Net net{{make_layer(LayerKind::conv3x3, "badconv", 3, 4)}};
    ParamStore store;
    try {
        build_params(net, store, 2, 4, 4, 1);
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("badconv") != std::string::npos);
    }
}

TEST_CASE("finite differences: conv3x3") {
    Net net{{make_layer(LayerKind::conv3x3, "c", 2, 3)}};
    ParamStore store;
    build_params(net, store, 2, 4, 4, 21);
    fd_check_net(net, store, random_tensor(2, 4, 4, 1), {}, 3, 4, 4, 1e-3);
}

TEST_CASE("finite differences: conv1x1") {
    Net net{{make_layer(LayerKind::conv1x1, "c", 3, 2)}};
    ParamStore store;
    build_params(net, store, 3, 4, 4, 22);
    fd_check_net(net, store, random_tensor(3, 4, 4, 2), {}, 2, 4, 4, 1e-3);
}

TEST_CASE("finite differences: transposed_conv4x4_stride2") {
    Net net{{make_layer(LayerKind::transposed_conv4x4_stride2, "t", 2, 2)}};
    ParamStore store;
    build_params(net, store, 2, 3, 3, 23);
    fd_check_net(net, store, random_tensor(2, 3, 3, 3), {}, 2, 6, 6, 1e-3);
}

TEST_CASE("finite differences: linear") {
    Net net{{make_layer(LayerKind::linear, "l", 5, 3)}};
    ParamStore store;
    build_params(net, store, 5, 1, 1, 24);
    fd_check_net(net, store, random_tensor(5, 1, 1, 4), {}, 3, 1, 1, 1e-3);
}

TEST_CASE("finite differences: rms_norm") {
    Net net{{make_layer(LayerKind::rms_norm, "n")}};
    ParamStore store;
    build_params(net, store, 4, 3, 3, 25);
    Tensor& gain = store.at("n.g");
    for (size_t i = 0; i < gain.size(); ++i) gain.data[i] = 0.7f + 0.1f * float(i);
    fd_check_net(net, store, random_tensor(4, 3, 3, 5), {}, 4, 3, 3, 1e-3);
}

TEST_CASE("finite differences: silu") {
    Net net{{make_layer(LayerKind::silu, "s")}};
    ParamStore store;
    build_params(net, store, 3, 3, 3, 26);
    fd_check_net(net, store, random_tensor(3, 3, 3, 6), {}, 3, 3, 3, 1e-3);
}

TEST_CASE("finite differences: film (including the aux embedding)") {
    LayerSpec film = make_layer(LayerKind::film, "f");
    film.emb_dim = 5;
    Net net{{film}};
    ParamStore store;
    build_params(net, store, 3, 3, 3, 27);
    Tensor& fw = store.at("f.w");
    for (size_t i = 0; i < fw.size(); ++i) fw.data[i] = 0.2f * oracle::unit_rand(71, i);

    Tensor emb = random_tensor(5, 1, 1, 7);
    AuxInputs aux;
    aux.emb = &emb;
    Tensor input = random_tensor(3, 3, 3, 8);
    fd_check_net(net, store, input, aux, 3, 3, 3, 1e-3);

    Tensor weights = random_tensor(3, 3, 3, 4242);
    ForwardTrace trace;
    forward(net, store, input, aux, &trace);
    Gradients g = backward(net, store, trace, weights, aux);
    double max_rel = 0;
    for (int i = 0; i < 5; ++i) {
        double fd = oracle::central_diff(emb[size_t(i)], 1e-3, [&]() {
            return weighted_forward(net, store, input, aux, weights);
        });
        max_rel = std::max(max_rel, oracle::rel_err(double(g.d_emb[size_t(i)]), fd));
    }
    CHECK(max_rel < 1e-3);
}

TEST_CASE("finite differences: cross_attention (params, input and tokens)") {
    LayerSpec attn = make_layer(LayerKind::cross_attention, "a", 8, 8);
    attn.heads = 2;
    attn.cond_dim = 6;
    Net net{{attn}};
    ParamStore store;
    build_params(net, store, 8, 2, 2, 28);

    Tensor tokens = random_tensor(3, 6, 1, 9);
    AuxInputs aux;
    aux.tokens = &tokens;
    Tensor input = random_tensor(8, 2, 2, 10);
    fd_check_net(net, store, input, aux, 8, 2, 2, 1e-3);

    Tensor weights = random_tensor(8, 2, 2, 4242);
    ForwardTrace trace;
    forward(net, store, input, aux, &trace);
    Gradients g = backward(net, store, trace, weights, aux);
    double max_rel = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        double fd = oracle::central_diff(tokens.data[i], 1e-3, [&]() {
            return weighted_forward(net, store, input, aux, weights);
        });
        max_rel = std::max(max_rel, oracle::rel_err(double(g.d_tokens.data[i]), fd));
    }
    CHECK(max_rel < 1e-3);
}

TEST_CASE("finite differences: nearest_upsample2x and avgpool2x") {
    Net net{{make_layer(LayerKind::avgpool2x, "p"), make_layer(LayerKind::nearest_upsample2x, "u")}};
    ParamStore store;
    build_params(net, store, 2, 4, 4, 29);
    fd_check_net(net, store, random_tensor(2, 4, 4, 11), {}, 2, 4, 4, 1e-3);
}

TEST_CASE("finite differences: add_skip") {
    LayerSpec c1 = make_layer(LayerKind::conv3x3, "c1", 2, 2);
    c1.save_as = "res";
    LayerSpec c2 = make_layer(LayerKind::conv3x3, "c2", 2, 2);
    LayerSpec add = make_layer(LayerKind::add_skip, "add");
    add.skip_from = "res";
    Net net{{c1, c2, add}};
    ParamStore store;
    build_params(net, store, 2, 3, 3, 30);
    fd_check_net(net, store, random_tensor(2, 3, 3, 12), {}, 2, 3, 3, 1e-3);
}

TEST_CASE("full denoiser network passes a spot finite-difference check") {
    DenoiserNet dn = make_denoiser(4, 100);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 99);

    Tensor f_t = random_tensor(4, 8, 8, 13);
    Tensor tokens = embed_tokens(dn.embedder, store, {2, 5, 9});
    Tensor sin_emb = sinusoidal_time_embedding(37, dn.time_dim);
    AuxInputs mlp_aux;
    ForwardTrace mlp_trace;
    Tensor emb = forward(dn.time_mlp, store, sin_emb, mlp_aux, &mlp_trace);
    AuxInputs aux;
    aux.emb = &emb;
    aux.tokens = &tokens;

    Tensor weights = random_tensor(4, 8, 8, 4242);
    ForwardTrace trace;
    forward(dn.main, store, f_t, aux, &trace);
    Gradients g = backward(dn.main, store, trace, weights, aux);

    auto loss = [&]() {
        Tensor e2 = forward(dn.time_mlp, store, sin_emb, mlp_aux);
        AuxInputs a2;
        a2.emb = &e2;
        a2.tokens = &tokens;
        return weighted_forward(dn.main, store, f_t, a2, weights);
    };  // time MLP stays float32; its params are not probed here

    const char* names[] = {"dn.in.w", "dn.rb1.c1.w", "dn.rb1.f.w", "dn.ca.attn.wq",
                           "dn.ca.attn.wk", "dn.rb3.c2.w", "dn.rb4.n.g", "dn.in.b"};
    double max_rel = 0;
    for (const char* n : names) {
        Tensor& p = store.at(n);
        size_t idx = p.size() / 2;
        double fd = oracle::central_diff(p.data[idx], 1e-3, loss);
        auto git = g.param_grads.find(n);
        REQUIRE(git != g.param_grads.end());
        double an = double(git->second.data[idx]);
        if (std::fabs(fd) < 1e-7 && std::fabs(an) < 1e-7) continue;
        max_rel = std::max(max_rel, oracle::rel_err(an, fd));
    }
    CHECK(max_rel < 1e-2);
}

TEST_CASE("rms_norm output has unit RMS per position with unit gains") {
    Net net{{make_layer(LayerKind::rms_norm, "n")}};
    ParamStore store;
    build_params(net, store, 8, 4, 4, 31);
    Tensor in = random_tensor(8, 4, 4, 14);
    Tensor out = forward(net, store, in, {});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double ss = 0;
            for (int c = 0; c < 8; ++c) ss += double(out.at(c, y, x)) * out.at(c, y, x);
            CHECK(std::fabs(std::sqrt(ss / 8.0) - 1.0) < 1e-4);
        }
}

TEST_CASE("softmax rows sum to one") {
    Tensor t(5, 7, 1);
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = 4.f * oracle::unit_rand(15, i);
    softmax_rows(t);
    for (int i = 0; i < 5; ++i) {
        double sum = 0;
        for (int j = 0; j < 7; ++j) {
            sum += double(t.at2(i, j));
            CHECK(t.at2(i, j) >= 0.f);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("adam leaves parameters unchanged for zero gradients") {
    Net net{{make_layer(LayerKind::linear, "l", 3, 3)}};
    ParamStore store;
    build_params(net, store, 3, 1, 1, 32);
    std::vector<float> before = store.at("l.w").data;
    std::map<std::string, Tensor> grads;
    grads.emplace("l.w", Tensor(3, 3, 1));
    adam_step(store, grads, 0.1f);
    CHECK(store.at("l.w").data == before);
}

TEST_CASE("first adam step matches the scalar bias-corrected formula") {
    ParamStore store;
    store.params.emplace("p", Tensor(1, 1, 1));
    store.at("p")[0] = 0.5f;
    std::map<std::string, Tensor> grads;
    Tensor g(1, 1, 1);
    g[0] = 0.3f;
    grads.emplace("p", g);

    const float lr = 0.01f, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    adam_step(store, grads, lr, b1, b2, eps);

    double m = (1 - b1) * 0.3, v = (1 - b2) * 0.3 * 0.3;
    double mhat = m / (1 - b1), vhat = v / (1 - b2);
    double want = 0.5 - lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(store.at("p")[0] == doctest::Approx(float(want)).epsilon(1e-6));
}

TEST_CASE("adam is a pure function of the gradient history") {
    auto run = [&]() {
        ParamStore store;
        store.params.emplace("p", Tensor(4, 1, 1));
        for (int i = 0; i < 4; ++i) store.at("p")[size_t(i)] = 0.1f * float(i);
        for (int step = 0; step < 5; ++step) {
            Tensor g(4, 1, 1);
            for (int i = 0; i < 4; ++i) g[size_t(i)] = oracle::unit_rand(50, uint64_t(step * 4 + i));
            std::map<std::string, Tensor> grads;
            grads.emplace("p", g);
            adam_step(store, grads, 0.01f);
        }
        return store.at("p").data;
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoints round-trip exactly") {
    DenoiserNet dn = make_denoiser(4, 50);
    ParamStore store;
    init_denoiser_params(dn, store, 8, 8, 17);
    store.step = 42;
    std::map<std::string, Tensor> grads;
    Tensor g = store.at("dn.in.w");
    grads.emplace("dn.in.w", g);
    adam_step(store, grads, 1e-3f);

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "uvga_ckpt_test";
    fs::create_directories(dir);
    std::string p1 = (dir / "a.tckp").string(), p2 = (dir / "b.tckp").string();
    save_checkpoint(store, p1);
    ParamStore loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(loaded.step == store.step);
    CHECK(loaded.params.at("dn.in.w").data == store.params.at("dn.in.w").data);
    CHECK(loaded.adam_m.at("dn.in.w").data == store.adam_m.at("dn.in.w").data);
}

}  // TEST_SUITE
