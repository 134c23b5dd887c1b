#include "uvga/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "uvga/rng.hpp"
#include "uvga/serialize.hpp"

namespace uvga {

const std::vector<NamedColor>& skin_palette() {
    static const std::vector<NamedColor> p = {
        {"pale", {0.92f, 0.80f, 0.70f}},
        {"tan", {0.80f, 0.62f, 0.45f}},
        {"brown", {0.55f, 0.38f, 0.25f}},
        {"dark", {0.35f, 0.24f, 0.18f}},
    };
    return p;
}

const std::vector<NamedColor>& shirt_palette() {
    static const std::vector<NamedColor> p = {
        {"red", {0.95f, 0.05f, 0.05f}},
        {"orange", {0.95f, 0.50f, 0.05f}},
        {"yellow", {0.95f, 0.95f, 0.05f}},
        {"green", {0.05f, 0.90f, 0.05f}},
        {"cyan", {0.05f, 0.85f, 0.85f}},
        {"blue", {0.05f, 0.10f, 0.95f}},
        {"purple", {0.60f, 0.05f, 0.90f}},
        {"white", {0.95f, 0.95f, 0.95f}},
    };
    return p;
}

const std::vector<NamedColor>& pants_palette() {
    static const std::vector<NamedColor> p = {
        {"black", {0.08f, 0.08f, 0.08f}},
        {"gray", {0.50f, 0.50f, 0.50f}},
        {"blue", {0.10f, 0.20f, 0.85f}},
        {"brown", {0.45f, 0.30f, 0.15f}},
        {"green", {0.10f, 0.60f, 0.10f}},
        {"red", {0.85f, 0.10f, 0.10f}},
        {"khaki", {0.75f, 0.70f, 0.50f}},
        {"white", {0.90f, 0.90f, 0.90f}},
    };
    return p;
}

const std::vector<NamedColor>& shoe_palette() {
    static const std::vector<NamedColor> p = {
        {"black", {0.08f, 0.08f, 0.08f}},
        {"white", {0.90f, 0.90f, 0.90f}},
        {"brown", {0.45f, 0.28f, 0.12f}},
        {"red", {0.85f, 0.10f, 0.10f}},
    };
    return p;
}

namespace {

void rgb_to_hsv(const Vec3& rgb, float& h, float& s, float& v) {
    float mx = std::max({rgb.x, rgb.y, rgb.z});
    float mn = std::min({rgb.x, rgb.y, rgb.z});
    v = mx;
    float d = mx - mn;
    s = mx > 0.f ? d / mx : 0.f;
    if (d <= 1e-9f) {
        h = 0.f;
        return;
    }
    if (mx == rgb.x)
        h = (rgb.y - rgb.z) / d;
    else if (mx == rgb.y)
        h = 2.f + (rgb.z - rgb.x) / d;
    else
        h = 4.f + (rgb.x - rgb.y) / d;
    h /= 6.f;
    if (h < 0.f) h += 1.f;
}

float logit(float p) { return std::log(p / (1.f - p)); }

}  // namespace

int nearest_color_index(const Vec3& rgb, const std::vector<NamedColor>& palette) {
    float ha, sa, va;
    rgb_to_hsv(rgb, ha, sa, va);
    int best = 0;
    float best_d = 1e30f;
    for (size_t i = 0; i < palette.size(); ++i) {
        float hb, sb, vb;
        rgb_to_hsv(palette[i].rgb, hb, sb, vb);
        float dh = std::fabs(ha - hb);
        dh = std::min(dh, 1.f - dh);
        float d = 4.f * dh * dh * sa * sb + (sa - sb) * (sa - sb) + (va - vb) * (va - vb);
        if (d < best_d) {
            best_d = d;
            best = int(i);
        }
    }
    return best;
}

AvatarSpec gen_spec(uint64_t seed, int index) {
    auto draw = [&](uint64_t field) {
        return CounterRng::mix(seed, rng_stream::dataset_spec, uint64_t(index) * 16 + field);
    };
    auto uniform = [&](uint64_t field) { return double(draw(field) >> 11) * 0x1.0p-53; };

    AvatarSpec s;
    s.index = index;
    s.skin_tone = int(draw(0) % skin_palette().size());
    s.shirt_color = int(draw(1) % shirt_palette().size());
    s.pants_color = int(draw(2) % pants_palette().size());
    s.shoe_color = int(draw(3) % shoe_palette().size());
    s.long_sleeve = (draw(4) & 1) != 0;
    s.body_scale = float(0.9 + 0.2 * uniform(5));
    s.pose_id = int(draw(6) % kPosePresetCount);
    s.seed = draw(7);
    return s;
}

BodyParams pose_preset(const BodyTemplate& t, int pose_id) {
    BodyParams p = BodyParams::rest(t);
    auto set = [&](const std::string& joint, const Vec3& axis, float angle) {
        for (size_t j = 0; j < t.skeleton.size(); ++j)
            if (t.skeleton[j].name == joint) p.theta[j] = Quat::from_axis_angle(axis, angle);
    };
    switch (pose_id % kPosePresetCount) {
        case 0:
            break;  // rest
        case 1:
            set("l_shoulder", {0, 0, 1}, 0.35f);
            set("r_shoulder", {0, 0, 1}, -0.35f);
            break;
        case 2:
            set("l_elbow", {0, 0, 1}, 0.5f);
            set("r_hip", {1, 0, 0}, 0.2f);
            break;
        case 3:
            set("spine", {0, 1, 0}, 0.25f);
            set("r_elbow", {0, 0, 1}, -0.45f);
            break;
    }
    return p;
}

AttributeMap spec_to_attribute_map(const AvatarSpec& spec, const BodyTemplate& t, int resolution) {
    AttributeMap m(resolution, resolution);
    const Vec3 skin = skin_palette()[size_t(spec.skin_tone)].rgb;
    const Vec3 shirt = shirt_palette()[size_t(spec.shirt_color)].rgb;
    const Vec3 pants = pants_palette()[size_t(spec.pants_color)].rgb;
    const Vec3 shoes = shoe_palette()[size_t(spec.shoe_color)].rgb;
    const float log_scale = std::log(spec.body_scale);

    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            float u = (x + 0.5f) / resolution;
            float v = (y + 0.5f) / resolution;
            const RegionChart* chart = nullptr;
            for (const auto& c : t.charts)
                if (c.contains(u, v)) {
                    chart = &c;
                    break;
                }
            if (!chart) continue;

            Vec3 color;
            if (chart->name == "torso")
                color = shirt;
            else if (chart->name == "head")
                color = skin;
            else if (chart->name == "left_arm" || chart->name == "right_arm")
                color = spec.long_sleeve ? shirt : skin;
            else {
                // Legs; the bottom quarter of the chart is the shoe region.
                float feet_v = chart->v1 - 0.25f * (chart->v1 - chart->v0);
                color = v >= feet_v ? shoes : pants;
            }

            size_t texel = size_t(y) * resolution + x;
            auto noise = [&](int ch) {
                uint64_t bits = CounterRng::mix(spec.seed, rng_stream::dataset_noise,
                                                texel * AttributeMap::kChannels + uint64_t(ch));
                return float((double(bits >> 11) * 0x1.0p-53) * 2.0 - 1.0) * 0.05f;
            };

            for (int ch = 0; ch < 3; ++ch) m.at(AttributeMap::kDeltaPos + ch, y, x) = noise(ch);
            for (int ch = 0; ch < 4; ++ch) m.at(AttributeMap::kDeltaRot + ch, y, x) = noise(3 + ch);
            for (int ch = 0; ch < 3; ++ch)
                m.at(AttributeMap::kDeltaScale + ch, y, x) = log_scale + noise(7 + ch);
            m.at(AttributeMap::kColor + 0, y, x) = logit(color.x) + noise(10);
            m.at(AttributeMap::kColor + 1, y, x) = logit(color.y) + noise(11);
            m.at(AttributeMap::kColor + 2, y, x) = logit(color.z) + noise(12);
            m.at(AttributeMap::kOpacity, y, x) = 4.f + noise(13);
        }
    }
    return m;
}

namespace {

int word_count(const std::string& s) {
    std::istringstream iss(s);
    int n = 0;
    std::string w;
    while (iss >> w) ++n;
    return n;
}

const std::vector<std::string>& stance_pool() {
    static const std::vector<std::string> p = {"standing straight", "facing forward",
                                               "standing upright"};
    return p;
}

const std::vector<std::string>& opener_pool() {
    static const std::vector<std::string> p = {"a person wearing a", "a person dressed in a"};
    return p;
}

}  // namespace

CaptionSet gen_captions(const AvatarSpec& spec, uint64_t seed) {
    const std::string& shirt = shirt_palette()[size_t(spec.shirt_color)].name;
    const std::string& pants = pants_palette()[size_t(spec.pants_color)].name;
    const std::string& shoes = shoe_palette()[size_t(spec.shoe_color)].name;
    const std::string& skin = skin_palette()[size_t(spec.skin_tone)].name;
    const std::string sleeve = spec.long_sleeve ? "long" : "short";

    auto pick = [&](const std::vector<std::string>& pool, uint64_t slot) -> const std::string& {
        uint64_t r = CounterRng::mix(seed, rng_stream::caption, uint64_t(spec.index) * 16 + slot);
        return pool[size_t(r % pool.size())];
    };

    CaptionSet c;
    c.short_captions[0] = opener_pool()[0] + " " + shirt + " shirt and " + pants + " pants";
    c.short_captions[1] =
        "a " + skin + " skinned person in a " + shirt + " shirt and " + pants + " pants";
    c.short_captions[2] =
        "an upright person with " + sleeve + " sleeves in a " + shirt + " shirt";
    c.short_captions[3] = pick(opener_pool(), 0) + " " + shirt + " shirt, " + pants +
                          " pants and " + shoes + " shoes, " + pick(stance_pool(), 1);
    c.short_captions[4] = "an avatar of a person wearing a " + shirt + " shirt, " + pants +
                          " pants, " + shoes + " shoes and " + sleeve + " sleeves";

    c.long_caption = "a full body avatar of a " + skin + " skinned person wearing a " + sleeve +
                     " sleeved " + shirt + " shirt with " + pants + " pants and " + shoes +
                     " shoes, " + pick(stance_pool(), 2) + ", photographed from all sides";
    return c;
}

ParsedCaption parse_caption(const std::string& caption) {
    std::string lowered = caption;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char ch) { return char(std::tolower(ch)); });
    for (auto& ch : lowered)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = ' ';

    std::vector<std::string> words;
    std::istringstream iss(lowered);
    std::string w;
    while (iss >> w) words.push_back(w);

    ParsedCaption out;
    for (size_t i = 1; i < words.size(); ++i) {
        const std::string& prev = words[i - 1];
        if (words[i] == "shirt")
            out.shirt = prev;
        else if (words[i] == "pants")
            out.pants = prev;
        else if (words[i] == "shoes")
            out.shoes = prev;
        else if (words[i] == "skinned")
            out.skin = prev;
        else if (words[i] == "sleeves" || words[i] == "sleeved")
            out.sleeve = prev;
    }
    return out;
}

const std::vector<std::string>& caption_vocabulary() {
    static const std::vector<std::string> vocab = [] {
        std::set<std::string> words = {
            "a",        "an",       "person",  "wearing", "shirt",   "and",    "pants",
            "skinned",  "in",       "upright", "with",    "sleeves", "sleeved", "dressed",
            "shoes",    "avatar",   "of",      "facing",  "forward", "standing", "straight",
            "full",     "body",     "photographed", "from", "all",   "sides",  "long",
            "short",
        };
        for (const auto& pal : {skin_palette(), shirt_palette(), pants_palette(), shoe_palette()})
            for (const auto& nc : pal) words.insert(nc.name);
        return std::vector<std::string>(words.begin(), words.end());
    }();
    return vocab;
}

DatasetManifest build_dataset(int n, uint64_t seed, const std::string& out_dir) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.template_path = "template.tbdy";

    BodyTemplate t = make_capsule_template(seed);
    save_template(t, (fs::path(out_dir) / manifest.template_path).string());

    for (int i = 0; i < n; ++i) {
        AvatarSpec spec = gen_spec(seed, i);
        AttributeMap attrs = spec_to_attribute_map(spec, t);
        CaptionSet captions = gen_captions(spec, spec.seed);

        char attrs_name[64], caps_name[64];
        std::snprintf(attrs_name, sizeof attrs_name, "attrs_%05d.tatt", i);
        std::snprintf(caps_name, sizeof caps_name, "captions_%05d.txt", i);
        save_attribute_map(attrs, (fs::path(out_dir) / attrs_name).string());

        std::ostringstream caps;
        caps << captions.long_caption << "\n";
        for (const auto& s : captions.short_captions) caps << s << "\n";
        atomic_write_file((fs::path(out_dir) / caps_name).string(), caps.str());

        manifest.entries.push_back({i, spec.seed, attrs_name, caps_name});
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
    return manifest;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ostringstream os;
    os << "template " << m.template_path << "\n";
    os << "seed " << m.seed << "\n";
    os << "count " << m.entries.size() << "\n";
    for (const auto& e : m.entries)
        os << e.index << " " << e.seed << " " << e.attrs_path << " " << e.captions_path << "\n";
    atomic_write_file(path, os.str());
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    DatasetManifest m;
    std::string key;
    size_t count = 0;
    is >> key >> m.template_path;
    if (key != "template") throw std::runtime_error(path + ": bad manifest header");
    is >> key >> m.seed;
    is >> key >> count;
    for (size_t i = 0; i < count; ++i) {
        DatasetEntry e;
        is >> e.index >> e.seed >> e.attrs_path >> e.captions_path;
        if (!is) throw std::runtime_error(path + ": truncated manifest");
        m.entries.push_back(e);
    }
    return m;
}

std::vector<std::string> load_captions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open captions: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace uvga
