#include "uvga/serialize.hpp"

#include <cstdio>
#include <filesystem>

namespace uvga {

void atomic_write_file(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open for write: " + tmp);
        os.write(bytes.data(), std::streamsize(bytes.size()));
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw std::runtime_error("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

std::ifstream open_input(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return is;
}

}  // namespace uvga
