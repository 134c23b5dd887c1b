#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvga {

// Single-sample float32 tensor, planar (channels, height, width). Vectors
// use (len, 1, 1) and matrices (rows, cols, 1). Batching is done by the
// training loops, one sample at a time.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(size_t(c_) * h_ * w_, 0.f) {}

    static Tensor zeros(int c_, int h_ = 1, int w_ = 1) { return Tensor(c_, h_, w_); }

    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    std::string shape_str() const {
        return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
    }

    float& at(int ci, int yi, int xi) { return data[(size_t(ci) * h + yi) * w + xi]; }
    float at(int ci, int yi, int xi) const { return data[(size_t(ci) * h + yi) * w + xi]; }
    float* plane(int ci) { return data.data() + size_t(ci) * h * w; }
    const float* plane(int ci) const { return data.data() + size_t(ci) * h * w; }

    // 2-d view: row-major (c rows, h cols).
    float& at2(int i, int j) { return data[size_t(i) * h + j]; }
    float at2(int i, int j) const { return data[size_t(i) * h + j]; }

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    Tensor& operator+=(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor& operator*=(float s) {
        for (auto& v : data) v *= s;
        return *this;
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double sum_squares(const Tensor& t) {
    double s = 0.0;
    for (float v : t.data) s += double(v) * v;
    return s;
}

}  // namespace uvga
