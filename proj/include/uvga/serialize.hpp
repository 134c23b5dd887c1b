#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvga {

// Little-endian binary stream helpers. x86/ARM little-endian hosts write
// native; magic tags make files self-identifying.

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    void magic(const char tag[4]) { os_.write(tag, 4); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }

    void f32_array(const float* data, size_t n) { raw(data, n * sizeof(float)); }
    void f32_array(const std::vector<float>& v) { f32_array(v.data(), v.size()); }

    void str(const std::string& s) {
        u32(uint32_t(s.size()));
        raw(s.data(), s.size());
    }

private:
    void raw(const void* p, size_t n) { os_.write(reinterpret_cast<const char*>(p), std::streamsize(n)); }
    std::ostream& os_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& is, std::string context = {})
        : is_(is), context_(std::move(context)) {}

    void expect_magic(const char tag[4]) {
        char buf[4];
        raw(buf, 4);
        if (std::memcmp(buf, tag, 4) != 0)
            throw std::runtime_error(context_ + ": bad magic, expected " + std::string(tag, 4));
    }

    uint32_t u32() {
        uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    float f32() {
        float v;
        raw(&v, sizeof v);
        return v;
    }

    void f32_array(float* data, size_t n) { raw(data, n * sizeof(float)); }

    std::string str() {
        uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

private:
    void raw(void* p, size_t n) {
        is_.read(reinterpret_cast<char*>(p), std::streamsize(n));
        if (!is_) throw std::runtime_error(context_ + ": truncated read");
    }
    std::istream& is_;
    std::string context_;
};

// Write-temp-then-rename so readers never see partial files.
void atomic_write_file(const std::string& path, const std::string& bytes);

template <typename Fn>
void atomic_write(const std::string& path, Fn&& write_fn) {
    std::ostringstream oss(std::ios::binary);
    BinaryWriter w(oss);
    write_fn(w);
    atomic_write_file(path, oss.str());
}

std::ifstream open_input(const std::string& path);

}  // namespace uvga
