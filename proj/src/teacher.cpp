#include "uvga/teacher.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "uvga/serialize.hpp"

namespace uvga {

Tensor downsample_map(const AttributeMap& m, int factor) {
    if (m.width % factor != 0 || m.height % factor != 0)
        throw std::invalid_argument("attribute map size not divisible by downsample factor");
    int w = m.width / factor, h = m.height / factor;
    Tensor out(AttributeMap::kChannels, h, w);
    float inv = 1.f / float(factor * factor);
    for (int c = 0; c < AttributeMap::kChannels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float acc = 0.f;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += m.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = acc * inv;
            }
    return out;
}

TeacherEncoder fit_teacher(const std::vector<AttributeMap>& maps, int latent_channels,
                           int down_factor) {
    if (maps.size() < 64)
        throw std::invalid_argument("teacher fit needs at least 64 attribute maps");
    const int C = AttributeMap::kChannels;
    if (latent_channels < 1 || latent_channels > C)
        throw std::invalid_argument("latent channel count out of range");

    // Accumulate texel mean and covariance in double.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(C);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(C, C);
    size_t count = 0;
    for (const auto& m : maps) {
        Tensor d = downsample_map(m, down_factor);
        const int hw = d.h * d.w;
        for (int i = 0; i < hw; ++i) {
            Eigen::VectorXd v(C);
            for (int c = 0; c < C; ++c) v[c] = double(d.data[size_t(c) * hw + i]);
            mean += v;
            second += v * v.transpose();
            ++count;
        }
    }
    mean /= double(count);
    Eigen::MatrixXd cov = second / double(count) - mean * mean.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("teacher fit: eigensolver failed");

    // Eigenvalues ascending; take the top latent_channels.
    double trace = cov.trace();
    TeacherEncoder t;
    t.latent_channels = latent_channels;
    t.down_factor = down_factor;
    t.mean.resize(size_t(C));
    for (int c = 0; c < C; ++c) t.mean[size_t(c)] = float(mean[c]);
    t.basis.resize(size_t(latent_channels) * C);
    t.scales.resize(size_t(latent_channels));
    for (int k = 0; k < latent_channels; ++k) {
        int src = C - 1 - k;
        double lambda = eig.eigenvalues()[src];
        if (lambda <= 1e-10 * std::max(1.0, trace))
            throw std::runtime_error("teacher fit: texel covariance rank below latent channels");
        for (int c = 0; c < C; ++c) t.basis[size_t(k) * C + c] = float(eig.eigenvectors()(c, src));
    }

    // Empirical per-channel variance of the projected dataset fixes the
    // normalization scales.
    Eigen::VectorXd var = Eigen::VectorXd::Zero(latent_channels);
    for (const auto& m : maps) {
        Tensor d = downsample_map(m, down_factor);
        const int hw = d.h * d.w;
        for (int i = 0; i < hw; ++i) {
            for (int k = 0; k < latent_channels; ++k) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    acc += double(t.basis[size_t(k) * C + c]) *
                           (double(d.data[size_t(c) * hw + i]) - double(t.mean[size_t(c)]));
                var[k] += acc * acc;
            }
        }
    }
    var /= double(count);
    for (int k = 0; k < latent_channels; ++k) {
        if (var[k] <= 1e-12) throw std::runtime_error("teacher fit: degenerate latent channel");
        t.scales[size_t(k)] = float(1.0 / std::sqrt(var[k]));
    }

    // A latent space must separate samples: zero between-map variance (for
    // example a dataset of identical maps) is a degenerate fit.
    {
        std::vector<Tensor> encoded;
        for (const auto& m : maps) encoded.push_back(encode(t, m));
        double between = 0.0;
        const size_t n_el = encoded[0].size();
        for (size_t i = 0; i < n_el; ++i) {
            double mu = 0, sq = 0;
            for (const auto& e : encoded) {
                mu += e.data[i];
                sq += double(e.data[i]) * e.data[i];
            }
            mu /= double(encoded.size());
            between += sq / double(encoded.size()) - mu * mu;
        }
        if (between / double(n_el) <= 1e-10)
            throw std::runtime_error("teacher fit: zero variance across the dataset");
    }
    return t;
}

Tensor encode(const TeacherEncoder& t, const AttributeMap& attrs) {
    Tensor d = downsample_map(attrs, t.down_factor);
    const int C = AttributeMap::kChannels, hw = d.h * d.w;
    Tensor out(t.latent_channels, d.h, d.w);
    for (int i = 0; i < hw; ++i) {
        for (int k = 0; k < t.latent_channels; ++k) {
            float acc = 0.f;
            for (int c = 0; c < C; ++c)
                acc += t.basis[size_t(k) * C + c] * (d.data[size_t(c) * hw + i] - t.mean[size_t(c)]);
            out.data[size_t(k) * hw + i] = acc * t.scales[size_t(k)];
        }
    }
    return out;
}

Tensor unproject(const TeacherEncoder& t, const Tensor& latent) {
    const int C = AttributeMap::kChannels, hw = latent.h * latent.w;
    Tensor out(C, latent.h, latent.w);
    for (int i = 0; i < hw; ++i) {
        for (int c = 0; c < C; ++c) {
            float acc = t.mean[size_t(c)];
            for (int k = 0; k < t.latent_channels; ++k)
                acc += t.basis[size_t(k) * C + c] * latent.data[size_t(k) * hw + i] /
                       t.scales[size_t(k)];
            out.data[size_t(c) * hw + i] = acc;
        }
    }
    return out;
}

void save_teacher(const TeacherEncoder& t, const std::string& path) {
    atomic_write(path, [&](BinaryWriter& w) {
        w.magic("TPCA");
        w.u32(1);
        w.u32(uint32_t(t.latent_channels));
        w.u32(uint32_t(t.down_factor));
        w.f32_array(t.mean);
        w.f32_array(t.basis);
        w.f32_array(t.scales);
    });
}

TeacherEncoder load_teacher(const std::string& path) {
    std::ifstream is = open_input(path);
    BinaryReader r(is, path);
    r.expect_magic("TPCA");
    if (r.u32() != 1) throw std::runtime_error(path + ": unsupported TPCA version");
    TeacherEncoder t;
    t.latent_channels = int(r.u32());
    t.down_factor = int(r.u32());
    t.mean.resize(AttributeMap::kChannels);
    r.f32_array(t.mean.data(), t.mean.size());
    t.basis.resize(size_t(t.latent_channels) * AttributeMap::kChannels);
    r.f32_array(t.basis.data(), t.basis.size());
    t.scales.resize(size_t(t.latent_channels));
    r.f32_array(t.scales.data(), t.scales.size());
    return t;
}

}  // namespace uvga
