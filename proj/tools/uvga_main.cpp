#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "uvga/image_io.hpp"
#include "uvga/pipeline.hpp"
#include "uvga/ply.hpp"
#include "uvga/renderer.hpp"
#include "uvga/training.hpp"

namespace fs = std::filesystem;
using namespace uvga;

namespace {

void add_common_options(CLI::App& app, RunConfig& cfg) {
    app.add_option("--dataset-dir", cfg.dataset_dir, "Dataset directory");
    app.add_option("--template", cfg.template_path, "Body template file (TBDY)");
    app.add_option("--teacher", cfg.teacher_path, "Teacher encoder file (TPCA)");
    app.add_option("--decoder", cfg.decoder_ckpt, "Decoder checkpoint (TCKP)");
    app.add_option("--denoiser", cfg.denoiser_ckpt, "Denoiser checkpoint (TCKP)");
    app.add_option("--out-dir", cfg.out_dir, "Output directory");
    app.add_option("--seed", cfg.seed, "Global seed");
}

int run(int argc, char** argv) {
    RunConfig cfg;
    // The config file loads first; explicit flags then override it.
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") cfg = load_config(argv[i + 1]);

    CLI::App app{"Text-conditioned latent diffusion for UV-structured Gaussian avatars"};
    app.require_subcommand(1);
    app.fallthrough();  // global options are accepted after subcommands too
    std::string config_path;
    app.add_option("--config", config_path, "Config file (key = value lines)");
    add_common_options(app, cfg);

    // dataset gen
    auto* dataset = app.add_subcommand("dataset", "Dataset commands");
    dataset->require_subcommand(1);
    auto* dataset_gen = dataset->add_subcommand("gen", "Generate the synthetic avatar dataset");
    dataset_gen->add_option("--n", cfg.dataset_size, "Number of avatars");

    // teacher fit
    auto* teacher_cmd = app.add_subcommand("teacher", "Teacher encoder commands");
    teacher_cmd->require_subcommand(1);
    auto* teacher_fit = teacher_cmd->add_subcommand("fit", "Fit the frozen PCA teacher");
    teacher_fit->add_option("--channels", cfg.latent_channels, "Latent channels");

    // train decoder / denoiser
    auto* train = app.add_subcommand("train", "Training commands");
    train->require_subcommand(1);
    auto* train_decoder = train->add_subcommand("decoder", "Train the distillation decoder");
    int render_steps = 0;
    train_decoder->add_option("--steps", cfg.decoder_steps, "Attribute-mode steps");
    train_decoder->add_option("--render-steps", render_steps, "Render-mode fine-tune steps");
    train_decoder->add_option("--batch", cfg.decoder_batch, "Batch size");
    train_decoder->add_option("--lr", cfg.decoder_lr, "Learning rate");

    auto* train_denoiser = train->add_subcommand("denoiser", "Train the latent denoiser");
    train_denoiser->add_option("--steps", cfg.denoiser_steps, "Training steps");
    train_denoiser->add_option("--batch", cfg.denoiser_batch, "Batch size");
    train_denoiser->add_option("--lr", cfg.denoiser_lr, "Learning rate");
    train_denoiser->add_option("--dropout", cfg.dropout_p, "Caption dropout probability");

    // generate
    auto* generate = app.add_subcommand("generate", "Sample a new avatar from a prompt");
    std::string prompt;
    int frames = 8, image_size = 128;
    generate->add_option("--prompt", prompt, "Text prompt (empty = unconditional)");
    generate->add_option("--steps", cfg.sample_steps, "Denoising steps");
    generate->add_option("--guidance", cfg.guidance_w, "Classifier-free guidance weight");
    generate->add_option("--frames", frames, "Turntable frame count");
    generate->add_option("--size", image_size, "Image size in pixels");

    // edit
    auto* edit = app.add_subcommand("edit", "Structure-aware edit of a saved latent");
    std::string edit_latent_path, region = "torso", tint_spec;
    edit->add_option("--latent", edit_latent_path, "Input latent (TLAT)")->required();
    edit->add_option("--region", region, "Body region (head/torso/left_arm/right_arm/left_leg/right_leg)");
    edit->add_option("--prompt", prompt, "Replacement prompt");
    edit->add_option("--steps", cfg.sample_steps, "Denoising steps");
    edit->add_option("--guidance", cfg.guidance_w, "Guidance weight");
    edit->add_option("--tint", tint_spec, "Direct color tint 'r,g,b' (skips diffusion)");
    edit->add_option("--size", image_size, "Image size in pixels");

    // animate
    auto* animate = app.add_subcommand("animate", "Render a pose sequence");
    std::string anim_latent_path, poses_path, anim_out;
    std::vector<float> beta_override, psi_override;
    animate->add_option("--latent", anim_latent_path, "Input latent (TLAT)")->required();
    animate->add_option("--poses", poses_path, "Pose sequence file")->required();
    animate->add_option("--out", anim_out, "Frame directory");
    animate->add_option("--beta", beta_override, "Shape coefficients")->delimiter(',');
    animate->add_option("--psi", psi_override, "Expression coefficients")->delimiter(',');
    animate->add_option("--size", image_size, "Image size in pixels");

    // render
    auto* render = app.add_subcommand("render", "Render a saved latent");
    std::string render_latent_path, render_out = "render.ppm";
    float azimuth_deg = 0.f;
    render->add_option("--latent", render_latent_path, "Input latent (TLAT)")->required();
    render->add_option("--camera", azimuth_deg, "Orbit azimuth in degrees");
    render->add_option("--out", render_out, "Output image path");
    render->add_option("--size", image_size, "Image size in pixels");

    // export-ply
    auto* export_cmd = app.add_subcommand("export-ply", "Export a latent as an ASCII PLY point cloud");
    std::string ply_latent_path, ply_out = "avatar.ply";
    export_cmd->add_option("--latent", ply_latent_path, "Input latent (TLAT)")->required();
    export_cmd->add_option("--out", ply_out, "Output PLY path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        app.exit(e);  // --help and friends
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    validate_config(cfg);

    if (*dataset_gen) {
        DatasetManifest m = build_dataset(cfg.dataset_size, cfg.seed, cfg.dataset_dir);
        std::printf("wrote %zu avatars to %s\n", m.entries.size(), cfg.dataset_dir.c_str());
        return 0;
    }

    if (*teacher_fit) {
        LoadedDataset data = load_dataset(cfg.dataset_dir);
        TeacherEncoder teacher = fit_teacher(data.maps, cfg.latent_channels);
        save_teacher(teacher, cfg.teacher_path);
        std::printf("teacher fitted on %zu maps -> %s\n", data.maps.size(), cfg.teacher_path.c_str());
        return 0;
    }

    if (*train_decoder) {
        LoadedDataset data = load_dataset(cfg.dataset_dir);
        TeacherEncoder teacher = load_teacher(cfg.teacher_path);
        std::vector<Tensor> latents = encode_dataset(teacher, data.maps);
        DecoderNet dec = make_decoder(cfg.latent_channels);
        DecoderTrainResult r = train_decoder_run(dec, cfg, latents, data.maps, data, render_steps,
                                                 [](int step, double loss) {
                                                     if (step % 50 == 0)
                                                         std::printf("step %5d loss %.4f\n", step, loss);
                                                 });
        save_checkpoint(r.store, cfg.decoder_ckpt);
        std::printf("decoder -> %s (final loss %.4f)\n", cfg.decoder_ckpt.c_str(), r.losses.back());
        return 0;
    }

    if (*train_denoiser) {
        LoadedDataset data = load_dataset(cfg.dataset_dir);
        TeacherEncoder teacher = load_teacher(cfg.teacher_path);
        std::vector<Tensor> latents = encode_dataset(teacher, data.maps);
        DenoiserNet dn = make_denoiser(cfg.latent_channels, cfg.total_steps);
        DenoiserTrainResult r = train_denoiser_run(dn, cfg, latents, data.captions,
                                                   [](int step, double loss) {
                                                       if (step % 200 == 0)
                                                           std::printf("step %5d loss %.2f\n", step, loss);
                                                   });
        save_checkpoint(r.store, cfg.denoiser_ckpt);
        std::printf("denoiser -> %s (final loss %.2f, dropout rate %.4f)\n", cfg.denoiser_ckpt.c_str(),
                    r.losses.back(), double(r.dropout_hits) / double(r.dropout_drawn));
        return 0;
    }

    if (*generate) {
        Pipeline p = load_pipeline(cfg);
        std::optional<std::string> opt_prompt;
        if (!prompt.empty()) opt_prompt = prompt;
        Tensor latent = generate_latent(p, opt_prompt, cfg.seed, cfg.sample_steps, cfg.guidance_w);

        fs::path out = fs::path(cfg.out_dir) / ("gen_" + std::to_string(cfg.seed));
        fs::create_directories(out);
        save_latent(latent, (out / "latent.tlat").string());
        GaussianSet set = latent_to_gaussians(p, latent, BodyParams::rest(p.body));
        Camera front = default_front_camera(image_size);
        write_ppm(rasterize(project(set, front), front), (out / "front.ppm").string());
        render_turntable(p, set, (out / "turntable").string(), frames, image_size);
        std::printf("avatar -> %s\n", out.string().c_str());
        return 0;
    }

    if (*edit) {
        Pipeline p = load_pipeline(cfg);
        Tensor latent = load_latent(edit_latent_path);
        fs::path out = fs::path(cfg.out_dir) / ("edit_" + std::to_string(cfg.seed));
        fs::create_directories(out);

        if (!tint_spec.empty()) {
            // Direct texture tint on the decoded map: raw color channels get
            // a constant shift inside the region.
            float r = 0, g = 0, b = 0;
            if (std::sscanf(tint_spec.c_str(), "%f,%f,%f", &r, &g, &b) != 3)
                throw CLI::ValidationError("--tint expects 'r,g,b'");
            AttributeMap attrs = decode(p.decoder, p.decoder_params, latent);
            std::vector<uint8_t> mask = region_mask(p.body, region, attrs.width);
            for (int y = 0; y < attrs.height; ++y)
                for (int x = 0; x < attrs.width; ++x)
                    if (mask[size_t(y) * attrs.width + x]) {
                        attrs.at(AttributeMap::kColor + 0, y, x) += r;
                        attrs.at(AttributeMap::kColor + 1, y, x) += g;
                        attrs.at(AttributeMap::kColor + 2, y, x) += b;
                    }
            save_attribute_map(attrs, (out / "tinted.tatt").string());
            PosedMesh mesh = lbs_deform(p.body, BodyParams::rest(p.body));
            BaseGaussians base = build_base_gaussians(mesh, p.body, p.cfg.attr_resolution);
            GaussianSet set = apply_offsets(base, attrs);
            Camera front = default_front_camera(image_size);
            write_ppm(rasterize(project(set, front), front), (out / "front.ppm").string());
            std::printf("tinted avatar -> %s\n", out.string().c_str());
            return 0;
        }

        std::optional<std::string> opt_prompt;
        if (!prompt.empty()) opt_prompt = prompt;
        Tensor edited =
            edit_latent(p, latent, region, opt_prompt, cfg.seed, cfg.sample_steps, cfg.guidance_w);
        save_latent(edited, (out / "latent.tlat").string());
        GaussianSet set = latent_to_gaussians(p, edited, BodyParams::rest(p.body));
        Camera front = default_front_camera(image_size);
        write_ppm(rasterize(project(set, front), front), (out / "front.ppm").string());
        render_turntable(p, set, (out / "turntable").string(), 8, image_size);
        std::printf("edited avatar -> %s\n", out.string().c_str());
        return 0;
    }

    if (*animate) {
        Pipeline p = load_pipeline(cfg);
        Tensor latent = load_latent(anim_latent_path);
        AttributeMap attrs = decode(p.decoder, p.decoder_params, latent);
        std::vector<BodyParams> poses = load_pose_sequence(poses_path, p.body);
        if (poses.empty()) throw std::runtime_error("pose sequence is empty");

        fs::path out = anim_out.empty() ? fs::path(cfg.out_dir) / "anim" : fs::path(anim_out);
        fs::create_directories(out);
        Camera front = default_front_camera(image_size);
        for (size_t f = 0; f < poses.size(); ++f) {
            BodyParams params = poses[f];
            for (size_t i = 0; i < beta_override.size() && i < params.beta.size(); ++i)
                params.beta[i] = beta_override[i];
            for (size_t i = 0; i < psi_override.size() && i < params.psi.size(); ++i)
                params.psi[i] = psi_override[i];
            PosedMesh mesh = lbs_deform(p.body, params);
            BaseGaussians base = build_base_gaussians(mesh, p.body, p.cfg.attr_resolution);
            GaussianSet set = apply_offsets(base, attrs);
            RenderedImage img = rasterize(project(set, front), front);
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04d.ppm", int(f));
            write_ppm(img, (out / name).string());
        }
        std::printf("%zu frames -> %s\n", poses.size(), out.string().c_str());
        return 0;
    }

    if (*render) {
        Pipeline p = load_pipeline(cfg);
        Tensor latent = load_latent(render_latent_path);
        GaussianSet set = latent_to_gaussians(p, latent, BodyParams::rest(p.body));
        Rigid pose = orbit_pose(Vec3{0.f, -0.05f, 0.f}, 2.5f, azimuth_deg * 0.017453293f);
        Camera cam = make_ortho_camera(image_size, image_size, float(image_size) / 2.2f, pose,
                                       Vec3{0.05f, 0.05f, 0.08f});
        write_ppm(rasterize(project(set, cam), cam), render_out);
        std::printf("render -> %s\n", render_out.c_str());
        return 0;
    }

    if (*export_cmd) {
        Pipeline p = load_pipeline(cfg);
        Tensor latent = load_latent(ply_latent_path);
        GaussianSet set = latent_to_gaussians(p, latent, BodyParams::rest(p.body));
        export_ply(set, ply_out);
        std::printf("%zu gaussians -> %s\n", set.size(), ply_out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
