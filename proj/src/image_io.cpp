#include "uvga/image_io.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "uvga/serialize.hpp"

namespace uvga {

void write_ppm(const RenderedImage& img, const std::string& path) {
    std::ostringstream os;
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = clampf(img.rgb_at(c, y, x), 0.f, 1.f);
                os.put(char(int(std::lround(v * 255.f))));
            }
    atomic_write_file(path, os.str());
}

RenderedImage read_ppm(const std::string& path) {
    std::ifstream is = open_input(path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error(path + ": not an 8-bit P6 PPM");
    is.get();  // single whitespace after header

    RenderedImage img(w, h);
    std::vector<char> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        is.read(row.data(), std::streamsize(row.size()));
        if (!is) throw std::runtime_error(path + ": truncated pixel data");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.rgb_at(c, y, x) = float(uint8_t(row[size_t(x) * 3 + c])) / 255.f;
    }
    for (auto& a : img.alpha) a = 1.f;
    return img;
}

}  // namespace uvga
