#include "uvga/training.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "uvga/renderer.hpp"
#include "uvga/rng.hpp"

namespace uvga {

LoadedDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    LoadedDataset d;
    d.manifest = load_manifest((fs::path(dir) / "manifest.txt").string());
    d.body = load_template((fs::path(dir) / d.manifest.template_path).string());
    d.maps.reserve(d.manifest.entries.size());
    d.captions.reserve(d.manifest.entries.size());
    for (const auto& e : d.manifest.entries) {
        d.maps.push_back(load_attribute_map((fs::path(dir) / e.attrs_path).string()));
        d.captions.push_back(load_captions((fs::path(dir) / e.captions_path).string()));
    }
    return d;
}

std::vector<Tensor> encode_dataset(const TeacherEncoder& teacher,
                                   const std::vector<AttributeMap>& maps) {
    std::vector<Tensor> latents;
    latents.reserve(maps.size());
    for (const auto& m : maps) latents.push_back(encode(teacher, m));
    return latents;
}

namespace {

size_t pick_index(uint64_t seed, int64_t step, int slot, size_t n) {
    return size_t(CounterRng::mix(seed, rng_stream::shuffle,
                                  uint64_t(step) * 4096 + uint64_t(slot)) %
                  uint64_t(n));
}

}  // namespace

DecoderTrainResult train_decoder_run(const DecoderNet& dec, const RunConfig& cfg,
                                     const std::vector<Tensor>& latents,
                                     const std::vector<AttributeMap>& maps,
                                     const LoadedDataset& data, int render_steps,
                                     const StepLogger& log) {
    if (latents.size() != maps.size() || latents.empty())
        throw std::invalid_argument("decoder training needs matching latents and maps");

    DecoderTrainResult result;
    init_decoder_params(dec, result.store, cfg.latent_size, cfg.latent_size, cfg.seed);

    for (int step = 0; step < cfg.decoder_steps; ++step) {
        std::vector<DecoderSample> batch;
        for (int b = 0; b < cfg.decoder_batch; ++b) {
            size_t i = pick_index(cfg.seed, step, b, latents.size());
            DecoderSample s;
            s.latent = latents[i];
            s.attrs_gt = &maps[i];
            batch.push_back(std::move(s));
        }
        DecoderLossRecord rec =
            train_decoder_step(dec, result.store, batch, DecoderLossMode::attribute, cfg.decoder_lr);
        result.losses.push_back(rec.total);
        if (log) log(step, rec.total);
    }

    if (render_steps > 0) {
        // Render-mode fine-tuning shares one base-gaussian set per pose
        // preset; ground-truth renders come from the ground-truth maps.
        PosedMesh rest = lbs_deform(data.body, BodyParams::rest(data.body));
        BaseGaussians base = build_base_gaussians(rest, data.body, cfg.attr_resolution);
        std::vector<Camera> cams;
        for (int v = 0; v < 4; ++v) {
            Rigid pose = orbit_pose(Vec3{0.f, -0.05f, 0.f}, 2.5f, 1.5707964f * float(v));
            cams.push_back(make_ortho_camera(64, 64, 64.f / 2.2f, pose, Vec3{0, 0, 0}));
        }

        for (int step = 0; step < render_steps; ++step) {
            std::vector<DecoderSample> batch;
            std::vector<std::vector<RenderedImage>> gt_store(size_t(cfg.decoder_batch));
            for (int b = 0; b < cfg.decoder_batch; ++b) {
                size_t i = pick_index(cfg.seed + 1, step, b, latents.size());
                GaussianSet gt_set = apply_offsets(base, maps[i]);
                for (const Camera& cam : cams)
                    gt_store[size_t(b)].push_back(rasterize(project(gt_set, cam), cam));
                DecoderSample s;
                s.latent = latents[i];
                s.attrs_gt = &maps[i];
                s.base = &base;
                s.cameras = &cams;
                s.gt_renders = &gt_store[size_t(b)];
                batch.push_back(std::move(s));
            }
            DecoderLossRecord rec = train_decoder_step(dec, result.store, batch,
                                                       DecoderLossMode::render, cfg.decoder_lr * 0.1f);
            result.losses.push_back(rec.total);
            if (log) log(cfg.decoder_steps + step, rec.total);
        }
    }
    return result;
}

DenoiserTrainResult train_denoiser_run(const DenoiserNet& dn, const RunConfig& cfg,
                                       const std::vector<Tensor>& latents,
                                       const std::vector<std::vector<std::string>>& captions,
                                       const StepLogger& log, const TrainProbe& probe,
                                       int probe_every) {
    if (latents.empty() || latents.size() != captions.size())
        throw std::invalid_argument("denoiser training needs matching latents and captions");

    DenoiserTrainResult result;
    init_denoiser_params(dn, result.store, cfg.latent_size, cfg.latent_size, cfg.seed);
    NoiseSchedule schedule = build_schedule(cfg.total_steps);

    for (int step = 0; step < cfg.denoiser_steps; ++step) {
        if (probe && probe_every > 0 && step % probe_every == 0) probe(step, result.store);
        std::vector<const Tensor*> batch_latents;
        std::vector<std::string> batch_captions;
        for (int b = 0; b < cfg.denoiser_batch; ++b) {
            size_t i = pick_index(cfg.seed, step, b, latents.size());
            batch_latents.push_back(&latents[i]);
            // One of the long caption or the five short ones.
            const auto& caps = captions[i];
            size_t ci = pick_index(cfg.seed, step, 512 + b, caps.size());
            batch_captions.push_back(caps[ci]);
        }
        // Cosine decay to 10% of the base rate.
        float progress = float(step) / float(std::max(1, cfg.denoiser_steps - 1));
        float lr = cfg.denoiser_lr * (0.1f + 0.45f * (1.f + std::cos(3.1415927f * progress)));
        DenoiserStepRecord rec = train_denoiser_step(dn, result.store, schedule, batch_latents,
                                                     batch_captions, lr, cfg.dropout_p,
                                                     step, cfg.seed);
        result.losses.push_back(rec.loss);
        result.dropout_drawn += int64_t(rec.dropped.size());
        for (uint8_t d : rec.dropped) result.dropout_hits += d;
        if (log) log(step, rec.loss);
    }
    if (probe && probe_every > 0) probe(cfg.denoiser_steps, result.store);
    return result;
}

}  // namespace uvga
