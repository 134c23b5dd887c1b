#include "uvga/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "uvga/image_io.hpp"
#include "uvga/renderer.hpp"
#include "uvga/serialize.hpp"
#include "uvga/synthetic.hpp"

namespace uvga {

void save_latent(const Tensor& latent, const std::string& path) {
    atomic_write(path, [&](BinaryWriter& w) {
        w.magic("TLAT");
        w.u32(1);
        w.u32(uint32_t(latent.c));
        w.u32(uint32_t(latent.h));
        w.u32(uint32_t(latent.w));
        w.f32_array(latent.data);
    });
}

Tensor load_latent(const std::string& path) {
    std::ifstream is = open_input(path);
    BinaryReader r(is, path);
    r.expect_magic("TLAT");
    if (r.u32() != 1) throw std::runtime_error(path + ": unsupported TLAT version");
    int c = int(r.u32()), h = int(r.u32()), w = int(r.u32());
    Tensor t(c, h, w);
    r.f32_array(t.data.data(), t.size());
    return t;
}

Pipeline load_pipeline(const RunConfig& cfg) {
    validate_config(cfg);
    Pipeline p;
    p.cfg = cfg;
    p.body = load_template(cfg.resolved_template_path());
    p.teacher = load_teacher(cfg.teacher_path);
    if (p.teacher.latent_channels != cfg.latent_channels)
        throw std::invalid_argument("teacher latent channels disagree with config");

    p.decoder = make_decoder(cfg.latent_channels);
    p.decoder_params = load_checkpoint(cfg.decoder_ckpt);
    p.denoiser = make_denoiser(cfg.latent_channels, cfg.total_steps);
    p.denoiser_params = load_checkpoint(cfg.denoiser_ckpt);
    p.schedule = build_schedule(cfg.total_steps);
    return p;
}

Tensor generate_latent(const Pipeline& p, const std::optional<std::string>& prompt, uint64_t seed,
                       int sample_steps, float guidance_w) {
    GuidanceConfig g;
    g.w = guidance_w;
    g.sample_steps = sample_steps;

    Tensor tokens;
    const Tensor* tok_ptr = nullptr;
    if (prompt) {
        tokens = embed_tokens(p.denoiser.embedder, p.denoiser_params,
                              caption_token_ids(p.denoiser.embedder, prompt));
        tok_ptr = &tokens;
    }
    X0Predictor pred = make_predictor(p.denoiser, p.denoiser_params);
    return sample(pred, p.schedule, tok_ptr, g, seed, p.cfg.latent_channels, p.cfg.latent_size,
                  p.cfg.latent_size);
}

GaussianSet latent_to_gaussians(const Pipeline& p, const Tensor& latent, const BodyParams& pose) {
    AttributeMap attrs = decode(p.decoder, p.decoder_params, latent);
    PosedMesh mesh = lbs_deform(p.body, pose);
    BaseGaussians base = build_base_gaussians(mesh, p.body, p.cfg.attr_resolution);
    return apply_offsets(base, attrs);
}

Camera default_front_camera(int size) {
    // The toy body spans roughly y in [-0.95, 0.8] around the origin.
    Rigid pose = look_at(Vec3{0.f, 0.f, 2.5f}, Vec3{0.f, -0.05f, 0.f}, Vec3{0.f, 1.f, 0.f});
    return make_ortho_camera(size, size, float(size) / 2.2f, pose, Vec3{0.05f, 0.05f, 0.08f});
}

void render_turntable(const Pipeline& p, const GaussianSet& set, const std::string& out_dir,
                      int n_frames, int size) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (int f = 0; f < n_frames; ++f) {
        float az = 6.2831853f * float(f) / float(n_frames);
        Rigid pose = orbit_pose(Vec3{0.f, -0.05f, 0.f}, 2.5f, az);
        Camera cam = make_ortho_camera(size, size, float(size) / 2.2f, pose, Vec3{0.05f, 0.05f, 0.08f});
        RenderedImage img = rasterize(project(set, cam), cam);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.ppm", f);
        write_ppm(img, (fs::path(out_dir) / name).string());
    }
}

Tensor latent_region_mask(const BodyTemplate& body, const std::string& region, int latent_size) {
    std::vector<uint8_t> m = region_mask(body, region, latent_size);
    Tensor mask(1, latent_size, latent_size);
    for (int i = 0; i < latent_size * latent_size; ++i) mask.data[size_t(i)] = float(m[size_t(i)]);
    return mask;
}

Tensor edit_latent(const Pipeline& p, const Tensor& latent, const std::string& region,
                   const std::optional<std::string>& prompt, uint64_t seed, int sample_steps,
                   float guidance_w) {
    Tensor mask = latent_region_mask(p.body, region, p.cfg.latent_size);

    GuidanceConfig g;
    g.w = guidance_w;
    g.sample_steps = sample_steps;

    Tensor tokens;
    const Tensor* tok_ptr = nullptr;
    if (prompt) {
        tokens = embed_tokens(p.denoiser.embedder, p.denoiser_params,
                              caption_token_ids(p.denoiser.embedder, prompt));
        tok_ptr = &tokens;
    }
    X0Predictor pred = make_predictor(p.denoiser, p.denoiser_params);
    return inpaint_sample(pred, p.schedule, latent, mask, tok_ptr, g, seed);
}

std::vector<BodyParams> load_pose_sequence(const std::string& path, const BodyTemplate& body) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open pose file: " + path);

    std::vector<BodyParams> frames;
    std::string line;
    int line_no = 0;
    const size_t nj = body.joint_count();
    while (std::getline(is, line)) {
        ++line_no;
        std::string trimmed = line;
        if (trimmed.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        BodyParams params = BodyParams::rest(body);
        for (size_t j = 0; j < nj; ++j) {
            Quat q;
            if (!(ss >> q.w >> q.x >> q.y >> q.z))
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected 4 floats per joint for " +
                                         std::to_string(nj) + " joints");
            if (q.norm() < 1e-6f)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": zero-norm quaternion");
            params.theta[j] = q.normalized();
        }
        float extra;
        if (ss >> extra)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": trailing values");
        frames.push_back(std::move(params));
    }
    return frames;
}

}  // namespace uvga
