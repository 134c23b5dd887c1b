#include "uvga/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uvga {

std::string RunConfig::resolved_template_path() const {
    if (!template_path.empty()) return template_path;
    return (std::filesystem::path(dataset_dir) / "template.tbdy").string();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_line(RunConfig& c, const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_float = [&] { return std::stof(value); };

    if (key == "dataset_dir") c.dataset_dir = value;
    else if (key == "template_path") c.template_path = value;
    else if (key == "teacher_path") c.teacher_path = value;
    else if (key == "decoder_ckpt") c.decoder_ckpt = value;
    else if (key == "denoiser_ckpt") c.denoiser_ckpt = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "latent_channels") c.latent_channels = as_int();
    else if (key == "latent_size") c.latent_size = as_int();
    else if (key == "attr_resolution") c.attr_resolution = as_int();
    else if (key == "total_steps") c.total_steps = as_int();
    else if (key == "dataset_size") c.dataset_size = as_int();
    else if (key == "decoder_lr") c.decoder_lr = as_float();
    else if (key == "decoder_steps") c.decoder_steps = as_int();
    else if (key == "decoder_batch") c.decoder_batch = as_int();
    else if (key == "denoiser_lr") c.denoiser_lr = as_float();
    else if (key == "denoiser_steps") c.denoiser_steps = as_int();
    else if (key == "denoiser_batch") c.denoiser_batch = as_int();
    else if (key == "dropout_p") c.dropout_p = as_float();
    else if (key == "sample_steps") c.sample_steps = as_int();
    else if (key == "guidance_w") c.guidance_w = as_float();
    else if (key == "seed") c.seed = std::stoull(value);
    else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    RunConfig c;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
        apply_config_line(c, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return c;
}

void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (c.latent_channels < 1 || c.latent_channels > 14) fail("latent_channels must be in [1,14]");
    if (c.latent_size < 2 || c.latent_size % 2 != 0) fail("latent_size must be even and >= 2");
    if (c.attr_resolution != 4 * c.latent_size)
        fail("attr_resolution must be 4x latent_size (two stride-2 upsamplings)");
    if (c.total_steps < 2) fail("total_steps must be >= 2");
    if (c.sample_steps < 1 || c.sample_steps > c.total_steps)
        fail("sample_steps must be in [1, total_steps]");
    if (c.guidance_w < 0.f) fail("guidance_w must be >= 0");
    if (c.dropout_p < 0.f || c.dropout_p > 1.f) fail("dropout_p must be in [0,1]");
    if (c.dataset_size < 1) fail("dataset_size must be >= 1");
    if (c.decoder_batch < 1 || c.denoiser_batch < 1) fail("batch sizes must be >= 1");
}

}  // namespace uvga
