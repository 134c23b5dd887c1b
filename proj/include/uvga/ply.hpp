#pragma once

#include <string>

#include "uvga/uv_gaussians.hpp"

namespace uvga {

// ASCII PLY: position, normal (the rotation frame's local z axis), 8-bit
// RGB, opacity, and the scale triplet per Gaussian.
void export_ply(const GaussianSet& set, const std::string& path);

// Reader for files written by export_ply (testing and inspection). The
// quaternion is rebuilt from the stored normal, so tangent spin is lost.
GaussianSet import_ply(const std::string& path);

}  // namespace uvga
