#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace psinger {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of 64-bit reals. Values are immutable once a tensor
// has been handed to the autodiff graph; mutation is only done while building.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(numel_of(shape), fill) {}

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<size_t> s, double v) { return Tensor(std::move(s), v); }
    static Tensor from(std::vector<size_t> s, std::vector<double> d) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        if (t.data.size() != numel_of(t.shape))
            throw ShapeError("Tensor::from: data length " + std::to_string(t.data.size()) +
                             " does not match shape " + shape_str(t.shape));
        return t;
    }
    static Tensor scalar(double v) { return from({1}, {v}); }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t dim(size_t i) const { return shape.at(i); }
    size_t rows() const { return shape.at(0); }
    size_t cols() const { return shape.at(1); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }
    double& at2(size_t i, size_t j) { return data[i * shape[1] + j]; }
    double at2(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static std::string shape_str(const std::vector<size_t>& s) {
        std::string r = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) r += "x";
            r += std::to_string(s[i]);
        }
        return r + ")";
    }
    std::string shape_str() const { return shape_str(shape); }

    // Debug assertion mode: NaN/Inf is a contract violation.
    void check_finite(const char* where) const {
        for (double v : data)
            if (!std::isfinite(v))
                throw std::runtime_error(std::string("non-finite value in ") + where);
    }
};

// "TNSR" binary format, little-endian: magic, u32 rank, rank x u32 dims,
// 1-byte dtype code (0 = f32, 1 = f64), payload.
void save_tnsr(const std::string& path, const Tensor& t, bool as_f32 = false);
Tensor load_tnsr(const std::string& path);

}  // namespace psinger
