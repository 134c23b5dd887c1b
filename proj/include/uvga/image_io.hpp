#pragma once

#include <string>

#include "uvga/renderer.hpp"

namespace uvga {

// Binary PPM (P6, 8-bit), values rounded from [0,1].
void write_ppm(const RenderedImage& img, const std::string& path);

// Reads a P6 PPM back into float rgb; alpha is set to 1.
RenderedImage read_ppm(const std::string& path);

}  // namespace uvga
