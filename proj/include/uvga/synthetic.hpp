#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uvga/body_model.hpp"
#include "uvga/uv_gaussians.hpp"

namespace uvga {

struct NamedColor {
    std::string name;
    Vec3 rgb;  // post-activation target, components in (0, 1)
};

const std::vector<NamedColor>& skin_palette();   // 4 entries
const std::vector<NamedColor>& shirt_palette();  // 8
const std::vector<NamedColor>& pants_palette();  // 8
const std::vector<NamedColor>& shoe_palette();   // 4

// Index of the palette color nearest to rgb in HSV space (circular hue,
// saturation-weighted). The text-alignment evaluation classifies rendered
// pixels with this.
int nearest_color_index(const Vec3& rgb, const std::vector<NamedColor>& palette);

struct AvatarSpec {
    int skin_tone = 0;    // skin_palette index
    int shirt_color = 0;  // shirt_palette index
    int pants_color = 0;
    int shoe_color = 0;
    bool long_sleeve = false;
    float body_scale = 1.f;  // in [0.9, 1.1]
    int pose_id = 0;         // preset index
    uint64_t seed = 0;
    int index = 0;
};

struct CaptionSet {
    std::string long_caption;                    // <= 40 words
    std::array<std::string, 5> short_captions;   // longest <= 16, shortest >= 8 words
};

constexpr int kPosePresetCount = 4;

AvatarSpec gen_spec(uint64_t seed, int index);

// Small fixed pose presets (rest pose plus mild limb rotations).
BodyParams pose_preset(const BodyTemplate& t, int pose_id);

// Ground-truth pre-activation attribute map: region colors painted through
// the inverse sigmoid, opacity bias +4, uniform log-scale ln(body_scale),
// and deterministic per-texel noise of amplitude 0.05.
AttributeMap spec_to_attribute_map(const AvatarSpec& spec, const BodyTemplate& t,
                                   int resolution = 64);

CaptionSet gen_captions(const AvatarSpec& spec, uint64_t seed);

// Inverse of the caption grammar: recovers attribute words from a caption.
struct ParsedCaption {
    std::optional<std::string> shirt, pants, shoes, skin, sleeve;
};
ParsedCaption parse_caption(const std::string& caption);

// Closed word list of the caption grammar (lowercase, sorted, unique).
const std::vector<std::string>& caption_vocabulary();

struct DatasetEntry {
    int index = 0;
    uint64_t seed = 0;
    std::string attrs_path;
    std::string captions_path;
};

struct DatasetManifest {
    std::string template_path;
    uint64_t seed = 0;
    std::vector<DatasetEntry> entries;
};

// Writes the toy template, per-avatar attribute maps and caption files,
// and a manifest. Pure function of (n, seed); re-runs overwrite with
// byte-identical files.
DatasetManifest build_dataset(int n, uint64_t seed, const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

std::vector<std::string> load_captions(const std::string& path);  // long caption first

}  // namespace uvga
