#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "uvga/body_model.hpp"
#include "uvga/config.hpp"
#include "uvga/image_io.hpp"
#include "uvga/pipeline.hpp"
#include "uvga/ply.hpp"
#include "uvga/renderer.hpp"
#include "uvga/serialize.hpp"
#include "uvga/synthetic.hpp"

using namespace uvga;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const char* bin = std::getenv("UVGA_BIN");
    REQUIRE(bin != nullptr);
    std::string cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE("cli_io") {

TEST_CASE("default run config validates") {
    RunConfig c;
    CHECK_NOTHROW(validate_config(c));
}

TEST_CASE("config validation rejects dimension mismatches") {
    RunConfig c;
    c.attr_resolution = 32;  // latent 16 requires 64
    CHECK_THROWS_AS(validate_config(c), std::invalid_argument);

    RunConfig d;
    d.latent_size = 15;  // odd, cannot pool
    CHECK_THROWS_AS(validate_config(d), std::invalid_argument);

    RunConfig e;
    e.sample_steps = 2000;
    CHECK_THROWS_AS(validate_config(e), std::invalid_argument);
}

TEST_CASE("config files parse with comments and overrides") {
    fs::path dir = test_dir("uvga_cfg_test");
    std::string path = (dir / "run.cfg").string();
    std::ofstream os(path);
    os << "# toy run\n";
    os << "dataset_dir = /tmp/somewhere\n";
    os << "guidance_w = 4.5\n";
    os << "seed = 99\n";
    os.close();

    RunConfig c = load_config(path);
    CHECK(c.dataset_dir == "/tmp/somewhere");
    CHECK(c.guidance_w == 4.5f);
    CHECK(c.seed == 99);
    CHECK(c.latent_channels == 8);  // untouched default
}

TEST_CASE("unknown config keys are rejected") {
    fs::path dir = test_dir("uvga_cfg_test");
    std::string path = (dir / "bad.cfg").string();
    std::ofstream os(path);
    os << "warp_drive = 1\n";
    os.close();
    CHECK_THROWS(load_config(path));
}

TEST_CASE("atomic writes leave no temp file behind") {
    fs::path dir = test_dir("uvga_atomic_test");
    std::string path = (dir / "out.bin").string();
    atomic_write_file(path, "hello");
    CHECK(fs::exists(path));
    CHECK(!fs::exists(path + ".tmp"));
    std::ifstream is(path);
    std::string content;
    is >> content;
    CHECK(content == "hello");
}

TEST_CASE("ppm round-trips within 8-bit quantization") {
    RenderedImage img(9, 7);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 9; ++x)
                img.rgb_at(c, y, x) = 0.5f + 0.5f * oracle::unit_rand(3, size_t(c * 63 + y * 9 + x));

    fs::path dir = test_dir("uvga_ppm_test");
    std::string path = (dir / "img.ppm").string();
    write_ppm(img, path);
    RenderedImage back = read_ppm(path);
    REQUIRE(back.width == 9);
    REQUIRE(back.height == 7);
    for (size_t i = 0; i < img.rgb.size(); ++i)
        CHECK(std::fabs(back.rgb[i] - clampf(img.rgb[i], 0.f, 1.f)) <= 0.5f / 255.f + 1e-6f);
}

TEST_CASE("empty gaussian sets export as valid zero-count PLY") {
    fs::path dir = test_dir("uvga_ply_test");
    std::string path = (dir / "empty.ply").string();
    export_ply({}, path);
    std::ifstream is(path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(text.find("element vertex 0") != std::string::npos);
    CHECK(text.find("end_header") != std::string::npos);
    GaussianSet back = import_ply(path);
    CHECK(back.empty());
}

TEST_CASE("single-gaussian PLY row follows the declared property order") {
    Gaussian g;
    g.mu = {1.f, 2.f, 3.f};
    g.rot = Quat::identity();
    g.scale = {0.5f, 0.25f, 0.125f};
    g.color = {1.f, 0.f, 0.f};
    g.alpha = 0.75f;

    fs::path dir = test_dir("uvga_ply_test");
    std::string path = (dir / "one.ply").string();
    export_ply({g}, path);
    std::ifstream is(path);
    std::string line, last;
    while (std::getline(is, line))
        if (!line.empty()) last = line;
    // position, normal (identity frame -> 0 0 1), 8-bit color, opacity, scales
    CHECK(last == "1 2 3 0 0 1 255 0 0 0.75 0.5 0.25 0.125");
}

TEST_CASE("PLY round-trips within color quantization") {
    GaussianSet set;
    for (int i = 0; i < 10; ++i) {
        Gaussian g;
        g.mu = {oracle::unit_rand(4, 3 * i), oracle::unit_rand(4, 3 * i + 1),
                oracle::unit_rand(4, 3 * i + 2)};
        g.rot = Quat::from_axis_angle({oracle::unit_rand(5, i), 1.f, oracle::unit_rand(5, i + 50)},
                                      oracle::unit_rand(5, i + 100));
        g.scale = {0.1f + 0.05f * i, 0.2f, 0.3f};
        g.color = {0.5f + 0.5f * oracle::unit_rand(6, i), 0.25f, 0.75f};
        g.alpha = 0.5f + 0.4f * oracle::unit_rand(7, i);
        set.push_back(g);
    }
    fs::path dir = test_dir("uvga_ply_test");
    std::string path = (dir / "round.ply").string();
    export_ply(set, path);
    GaussianSet back = import_ply(path);
    REQUIRE(back.size() == set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        CHECK(norm(back[i].mu - set[i].mu) < 1e-5f);
        CHECK(norm(back[i].scale - set[i].scale) < 1e-5f);
        CHECK(std::fabs(back[i].alpha - set[i].alpha) < 1e-5f);
        CHECK(norm(back[i].color - set[i].color) <= std::sqrt(3.f) * 0.5f / 255.f + 1e-6f);
        // Normals survive; tangent spin does not.
        Vec3 n0 = to_mat3(set[i].rot) * Vec3{0, 0, 1};
        Vec3 n1 = to_mat3(back[i].rot) * Vec3{0, 0, 1};
        CHECK(norm(n0 - n1) < 1e-4f);
    }
}

TEST_CASE("pose sequence files parse per line with line-numbered errors") {
    BodyTemplate t = make_capsule_template(3);
    fs::path dir = test_dir("uvga_pose_test");
    std::string good = (dir / "good.txt").string();
    {
        std::ofstream os(good);
        for (int f = 0; f < 3; ++f) {
            for (size_t j = 0; j < t.joint_count(); ++j) os << "1 0 0 0 ";
            os << "\n";
        }
    }
    std::vector<BodyParams> frames = load_pose_sequence(good, t);
    REQUIRE(frames.size() == 3);
    CHECK(frames[0].theta.size() == t.joint_count());

    std::string bad = (dir / "bad.txt").string();
    {
        std::ofstream os(bad);
        os << "1 0 0\n";  // wrong float count
    }
    try {
        load_pose_sequence(bad, t);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":1") != std::string::npos);
    }
}

TEST_CASE("latent files round-trip exactly") {
    Tensor latent(8, 16, 16);
    for (size_t i = 0; i < latent.size(); ++i) latent.data[i] = oracle::unit_rand(8, i);
    fs::path dir = test_dir("uvga_latent_test");
    std::string path = (dir / "l.tlat").string();
    save_latent(latent, path);
    Tensor back = load_latent(path);
    CHECK(back.c == 8);
    CHECK(back.h == 16);
    CHECK(back.data == latent.data);
}

TEST_CASE("latent region masks align with the attribute-resolution masks") {
    BodyTemplate t = make_capsule_template(3);
    Tensor mask16 = latent_region_mask(t, "torso", 16);
    std::vector<uint8_t> mask64 = region_mask(t, "torso", 64);
    // Chart boundaries sit on multiples of 16 texels at the 64 resolution,
    // so each latent texel corresponds to a uniform 4x4 block.
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            int count = 0;
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx) count += mask64[size_t(4 * y + dy) * 64 + 4 * x + dx];
            CHECK((count == 0 || count == 16));
            CHECK(mask16.at(0, y, x) == (count == 16 ? 1.f : 0.f));
        }
}

TEST_CASE("animation frames match rotated-camera renders (object/camera duality)") {
    BodyTemplate t = make_capsule_template(3);
    AttributeMap attrs(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            attrs.at(AttributeMap::kColor + 0, y, x) = 1.f;
            attrs.at(AttributeMap::kColor + 1, y, x) = -1.f;
            attrs.at(AttributeMap::kOpacity, y, x) = 4.f;
        }

    const float angle = 0.7f;
    // Object route: rotate the root about +y.
    BodyParams posed = BodyParams::rest(t);
    posed.theta[0] = Quat::from_axis_angle({0, 1, 0}, angle);
    PosedMesh mesh_rot = lbs_deform(t, posed);
    GaussianSet set_rot = apply_offsets(build_base_gaussians(mesh_rot, t, 64), attrs);

    // Camera route: orbit the camera by -angle around the same axis.
    PosedMesh mesh_rest = lbs_deform(t, BodyParams::rest(t));
    GaussianSet set_rest = apply_offsets(build_base_gaussians(mesh_rest, t, 64), attrs);

    Camera cam_front = make_ortho_camera(64, 64, 64.f / 2.2f,
                                         look_at({0, 0, 2.5f}, {0, 0, 0}, {0, 1, 0}), Vec3{});
    Camera cam_orbit = make_ortho_camera(64, 64, 64.f / 2.2f, orbit_pose({0, 0, 0}, 2.5f, -angle),
                                         Vec3{});

    RenderedImage a = rasterize(project(set_rot, cam_front), cam_front);
    RenderedImage b = rasterize(project(set_rest, cam_orbit), cam_orbit);
    double mean_diff = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) mean_diff += std::fabs(double(a.rgb[i]) - b.rgb[i]);
    mean_diff /= double(a.rgb.size());
    CHECK(mean_diff < 1e-3);
}

TEST_CASE("identity pose sequences render identical frames at animation rate") {
    BodyTemplate t = make_capsule_template(3);
    AttributeMap attrs(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            attrs.at(AttributeMap::kColor + 1, y, x) = 1.f;
            attrs.at(AttributeMap::kOpacity, y, x) = 4.f;
        }
    Camera cam = make_ortho_camera(96, 96, 96.f / 2.2f,
                                   look_at({0, 0, 2.5f}, {0, -0.05f, 0}, {0, 1, 0}), Vec3{});

    auto render_frame = [&](const BodyParams& pose) {
        PosedMesh mesh = lbs_deform(t, pose);
        BaseGaussians base = build_base_gaussians(mesh, t, 64);
        GaussianSet set = apply_offsets(base, attrs);
        return rasterize(project(set, cam), cam);
    };

    auto t0 = std::chrono::steady_clock::now();
    RenderedImage f0 = render_frame(BodyParams::rest(t));
    RenderedImage f1 = render_frame(BodyParams::rest(t));
    RenderedImage f2 = render_frame(BodyParams::rest(t));
    double three_frames =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    CHECK(f0.rgb == f1.rgb);
    CHECK(f1.rgb == f2.rgb);
    // 30 frames must fit a 30 s budget; 3 frames get 3 s plus slack.
    CHECK(three_frames < 9.0);
}

TEST_CASE("cli: --help exits 0, usage errors exit 2, runtime errors exit 1") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("generate --help") == 0);
    CHECK(run_cli("--no-such-flag generate") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("edit --region torso") == 2);  // missing required --latent
    // Valid usage, missing checkpoint files -> runtime error.
    CHECK(run_cli("generate --prompt \"a red shirt\" --decoder /nonexistent.tckp") == 1);
}

TEST_CASE("cli: dataset gen followed by teacher fit works end to end") {
    fs::path dir = test_dir("uvga_cli_e2e");
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string data = (dir / "data").string();
    std::string teacher = (dir / "teacher.tpca").string();
    CHECK(run_cli("dataset gen --n 64 --seed 5 --dataset-dir " + data) == 0);
    CHECK(fs::exists(fs::path(data) / "manifest.txt"));
    CHECK(run_cli("teacher fit --dataset-dir " + data + " --teacher " + teacher) == 0);
    CHECK(fs::exists(teacher));
    TeacherEncoder t = load_teacher(teacher);
    CHECK(t.latent_channels == 8);
}

}  // TEST_SUITE
