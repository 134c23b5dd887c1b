#pragma once

#include <string>
#include <vector>

#include "uvga/tensor.hpp"
#include "uvga/uv_gaussians.hpp"

namespace uvga {

// Frozen latent-space encoder: per-texel linear code over 4x4-downsampled
// attribute maps. Rows of `basis` are orthonormal; `scales` normalize each
// latent channel to unit dataset variance.
struct TeacherEncoder {
    int latent_channels = 8;
    int down_factor = 4;
    std::vector<float> mean;    // kChannels
    std::vector<float> basis;   // latent_channels x kChannels, row-major
    std::vector<float> scales;  // latent_channels

    bool operator==(const TeacherEncoder& o) const {
        return latent_channels == o.latent_channels && down_factor == o.down_factor &&
               mean == o.mean && basis == o.basis && scales == o.scales;
    }
};

// Fits the per-texel PCA over all downsampled texel vectors of the dataset.
// Requires >= 64 maps; throws std::runtime_error if the texel covariance
// has rank < latent_channels.
TeacherEncoder fit_teacher(const std::vector<AttributeMap>& maps, int latent_channels = 8,
                           int down_factor = 4);

// Area-average downsample of every channel by the teacher's factor.
Tensor downsample_map(const AttributeMap& m, int factor);

// Latent = scales * basis * (downsample(attrs) - mean), per texel.
Tensor encode(const TeacherEncoder& t, const AttributeMap& attrs);

// Pseudo-inverse of encode (without the resolution restoration): returns
// the rank-limited reconstruction at latent resolution, channel-planar
// (kChannels, h, w). Used by tests and the latent-swap baseline.
Tensor unproject(const TeacherEncoder& t, const Tensor& latent);

void save_teacher(const TeacherEncoder& t, const std::string& path);
TeacherEncoder load_teacher(const std::string& path);

}  // namespace uvga
