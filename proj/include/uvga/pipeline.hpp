#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uvga/body_model.hpp"
#include "uvga/config.hpp"
#include "uvga/decoder.hpp"
#include "uvga/denoiser.hpp"
#include "uvga/diffusion.hpp"
#include "uvga/teacher.hpp"

namespace uvga {

void save_latent(const Tensor& latent, const std::string& path);
Tensor load_latent(const std::string& path);

// Everything a sampling-side command needs, loaded once.
struct Pipeline {
    RunConfig cfg;
    BodyTemplate body;
    TeacherEncoder teacher;
    DecoderNet decoder;
    ParamStore decoder_params;
    DenoiserNet denoiser;
    ParamStore denoiser_params;
    NoiseSchedule schedule;
};

Pipeline load_pipeline(const RunConfig& cfg);

// prompt == nullopt samples unconditionally.
Tensor generate_latent(const Pipeline& p, const std::optional<std::string>& prompt, uint64_t seed,
                       int sample_steps, float guidance_w);

// Latent -> attribute map -> posed Gaussians.
GaussianSet latent_to_gaussians(const Pipeline& p, const Tensor& latent, const BodyParams& pose);

Camera default_front_camera(int size = 128);

// Renders n_frames orbit views and writes frame_%04d.ppm into out_dir.
void render_turntable(const Pipeline& p, const GaussianSet& set, const std::string& out_dir,
                      int n_frames, int size);

// Blended-latent edit: inpaints the region's latent texels under a new
// prompt; everything else stays bit-identical to the input latent.
Tensor edit_latent(const Pipeline& p, const Tensor& latent, const std::string& region,
                   const std::optional<std::string>& prompt, uint64_t seed, int sample_steps,
                   float guidance_w);

// Region mask at latent resolution as a (1, h, w) 0/1 tensor.
Tensor latent_region_mask(const BodyTemplate& body, const std::string& region, int latent_size);

// Pose sequence file: one line per frame, 4 floats (w x y z) per joint.
std::vector<BodyParams> load_pose_sequence(const std::string& path, const BodyTemplate& body);

}  // namespace uvga
