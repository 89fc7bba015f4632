#pragma once

#include <functional>
#include <map>
#include <string>

#include "psinger/autodiff.hpp"
#include "psinger/rng.hpp"
#include "psinger/tensor.hpp"

namespace psinger::nn {

enum class InitKind { Zeros, Ones, Gauss, FanIn };

struct Init {
    InitKind kind = InitKind::FanIn;
    double scale = 1.0;
    static Init zeros() { return {InitKind::Zeros, 0.0}; }
    static Init ones() { return {InitKind::Ones, 1.0}; }
    static Init gauss(double std) { return {InitKind::Gauss, std}; }
    static Init fan_in(double gain = 1.0) { return {InitKind::FanIn, gain}; }
};

struct Param {
    Tensor value;
    Tensor m, v;  // Adam moments
    bool trainable = true;
    bool pad_row0 = false;  // row 0 pinned to zeros (padding embedding)
};

// Named parameter registry. Initialization streams are derived from the
// parameter name, so values do not depend on creation order.
class ParamStore {
public:
    uint64_t init_seed = 0x5EEDull;

    Param& get_or_create(const std::string& name, const std::vector<size_t>& shape, Init init);
    Param* find(const std::string& name);
    const std::map<std::string, Param>& all() const { return params_; }
    std::map<std::string, Param>& all() { return params_; }

    void set_trainable(const std::string& prefix, bool trainable);
    uint64_t checksum(const std::string& prefix = "") const;  // over raw value bytes

    void save(const std::string& dir, const std::string& meta_json) const;
    std::string load(const std::string& dir);  // returns meta json text

private:
    std::map<std::string, Param> params_;
};

// Per-step graph context. Each parameter is wrapped into exactly one leaf Var
// per step so gradients from every use accumulate in one place.
struct Ctx {
    ParamStore& ps;
    bool training = false;
    uint64_t seed = 0;  // base stream for dropout draws
    uint64_t calls = 0;
    std::map<std::string, ad::Var> vars;

    Ctx(ParamStore& p, bool train, uint64_t sd) : ps(p), training(train), seed(sd) {}

    ad::Var p(const std::string& name, const std::vector<size_t>& shape, Init init);
    uint64_t next_seed() { return Rng::derive(seed, ++calls); }
    double rate(double r) const { return training ? r : 0.0; }
    // grads harvested after backward()
    const Tensor* grad_of(const std::string& name) const;
};

// ---- building blocks ----

// y = x W (+ b); W is din x dout
ad::Var linear(Ctx& c, const std::string& name, const ad::Var& x, size_t dout, bool bias = true);

// multi-head attention with Q/K/V/O projections
ad::Var mha(Ctx& c, const std::string& name, const ad::Var& q_in, const ad::Var& kv_in,
            size_t heads, const std::vector<uint8_t>* mask = nullptr);

// self-attention sub-layer with residual + layer norm
ad::Var sa_block(Ctx& c, const std::string& name, const ad::Var& x, size_t heads);

// FastSpeech-style encoder layer: self-attention + two 1-D convs, each
// sub-layer wrapped in residual + layer norm
ad::Var fft_block(Ctx& c, const std::string& name, const ad::Var& x, size_t heads, size_t kernel,
                  double dropout);

ad::Var layer_norm_p(Ctx& c, const std::string& name, const ad::Var& x);

// conv1d with named parameters; w: cout x cin x k
ad::Var conv1d_p(Ctx& c, const std::string& name, const ad::Var& x, size_t cout, size_t k,
                 size_t dilation = 1, size_t stride = 1, Init winit = Init::fan_in());

// single-layer tanh RNN over time-major input, returns T x hidden
ad::Var rnn(Ctx& c, const std::string& name, const ad::Var& x, size_t hidden);

// constants
Tensor sinusoidal_positions(size_t n, size_t d);
Tensor diffusion_step_embedding(size_t t, size_t dim);

}  // namespace psinger::nn
