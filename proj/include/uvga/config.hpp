#pragma once

#include <cstdint>
#include <string>

namespace uvga {

// Run configuration: flat `key = value` text with `#` comments; CLI flags
// override file values. Validated before any command touches checkpoints.
struct RunConfig {
    // Paths.
    std::string dataset_dir = "data";
    std::string template_path;  // defaults to <dataset_dir>/template.tbdy
    std::string teacher_path = "teacher.tpca";
    std::string decoder_ckpt = "decoder.tckp";
    std::string denoiser_ckpt = "denoiser.tckp";
    std::string out_dir = "out";

    // Model dims.
    int latent_channels = 8;
    int latent_size = 16;      // latent h = w
    int attr_resolution = 64;  // attribute map h = w

    // Schedule.
    int total_steps = 1000;

    // Training.
    int dataset_size = 512;
    float decoder_lr = 1e-3f;
    int decoder_steps = 600;
    int decoder_batch = 8;
    float denoiser_lr = 3e-4f;
    int denoiser_steps = 8000;
    int denoiser_batch = 16;
    float dropout_p = 0.2f;

    // Sampling.
    int sample_steps = 100;
    float guidance_w = 3.f;
    uint64_t seed = 0;

    std::string resolved_template_path() const;
};

RunConfig load_config(const std::string& path);
void apply_config_line(RunConfig& c, const std::string& key, const std::string& value);

// Throws std::invalid_argument on any inconsistency (resolution not 4x the
// latent size, odd latent size, sample steps above T, ...).
void validate_config(const RunConfig& c);

}  // namespace uvga
