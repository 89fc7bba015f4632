#include "psinger/tensor.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace psinger {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

uint32_t read_u32(std::FILE* f) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("TNSR: truncated file");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void save_tnsr(const std::string& path, const Tensor& t, bool as_f32) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("TNSR: cannot open for write: " + path);
    std::fwrite("TNSR", 1, 4, f.get());
    write_u32(f.get(), static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape) write_u32(f.get(), static_cast<uint32_t>(d));
    unsigned char dtype = as_f32 ? 0 : 1;
    std::fwrite(&dtype, 1, 1, f.get());
    if (as_f32) {
        std::vector<float> buf(t.data.begin(), t.data.end());
        std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
    } else {
        std::fwrite(t.data.data(), sizeof(double), t.data.size(), f.get());
    }
}

Tensor load_tnsr(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("TNSR: cannot open: " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "TNSR", 4) != 0)
        throw std::runtime_error("TNSR: bad magic in " + path);
    uint32_t rank = read_u32(f.get());
    if (rank > 8) throw std::runtime_error("TNSR: implausible rank in " + path);
    std::vector<size_t> shape(rank);
    for (auto& d : shape) d = read_u32(f.get());
    unsigned char dtype;
    if (std::fread(&dtype, 1, 1, f.get()) != 1) throw std::runtime_error("TNSR: truncated file");
    Tensor t(shape);
    size_t n = t.numel();
    if (dtype == 0) {
        std::vector<float> buf(n);
        if (std::fread(buf.data(), sizeof(float), n, f.get()) != n)
            throw std::runtime_error("TNSR: truncated payload in " + path);
        for (size_t i = 0; i < n; ++i) t.data[i] = buf[i];
    } else if (dtype == 1) {
        if (std::fread(t.data.data(), sizeof(double), n, f.get()) != n)
            throw std::runtime_error("TNSR: truncated payload in " + path);
    } else {
        throw std::runtime_error("TNSR: unknown dtype code in " + path);
    }
    return t;
}

}  // namespace psinger
