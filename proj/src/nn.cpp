#include "psinger/nn.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace psinger::nn {

using ad::Var;

Param& ParamStore::get_or_create(const std::string& name, const std::vector<size_t>& shape,
                                 Init init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (it->second.value.shape != shape)
            throw ShapeError("param " + name + ": shape " + it->second.value.shape_str() +
                             " does not match requested " + Tensor::shape_str(shape));
        return it->second;
    }
    Param p;
    p.value = Tensor::zeros(shape);
    if (init.kind == InitKind::Ones) {
        for (auto& v : p.value.data) v = 1.0;
    } else if (init.kind != InitKind::Zeros) {
        Rng rng(Rng::derive(init_seed, hash_str(name.c_str())));
        double std = init.scale;
        if (init.kind == InitKind::FanIn) {
            // din x dout for linears; cin * kernel volume for conv weights
            size_t fan = shape.size() == 2 ? shape[0]
                                           : (shape.size() > 2 ? Tensor::numel_of(shape) / shape[0]
                                                               : shape[0]);
            std = init.scale / std::sqrt(double(fan));
        }
        for (auto& v : p.value.data) v = rng.normal() * std;
    }
    p.m = Tensor::zeros(shape);
    p.v = Tensor::zeros(shape);
    return params_.emplace(name, std::move(p)).first->second;
}

Param* ParamStore::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, p] : params_)
        if (name.rfind(prefix, 0) == 0) p.trainable = trainable;
}

uint64_t ParamStore::checksum(const std::string& prefix) const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        for (char ch : name) h = (h ^ uint64_t(uint8_t(ch))) * 1099511628211ull;
        const auto* bytes = reinterpret_cast<const uint8_t*>(p.value.data.data());
        for (size_t i = 0; i < p.value.numel() * sizeof(double); ++i)
            h = (h ^ bytes[i]) * 1099511628211ull;
    }
    return h;
}

namespace {
std::string sanitize(const std::string& name) {
    std::string s = name;
    for (auto& c : s)
        if (c == '/' || c == '\\') c = '_';
    return s;
}
}  // namespace

void ParamStore::save(const std::string& dir, const std::string& meta_json) const {
    fs::create_directories(dir);
    for (const auto& [name, p] : params_) save_tnsr(dir + "/" + sanitize(name) + ".tnsr", p.value);
    std::ofstream meta(dir + "/meta.json");
    meta << meta_json;
}

std::string ParamStore::load(const std::string& dir) {
    if (!fs::exists(dir + "/meta.json"))
        throw std::runtime_error("checkpoint: missing meta.json in " + dir);
    for (auto& [name, p] : params_) {
        std::string path = dir + "/" + sanitize(name) + ".tnsr";
        if (!fs::exists(path)) throw std::runtime_error("checkpoint: missing tensor " + path);
        Tensor t = load_tnsr(path);
        if (t.shape != p.value.shape)
            throw ShapeError("checkpoint: " + name + " has shape " + t.shape_str() + ", expected " +
                             p.value.shape_str());
        p.value = std::move(t);
    }
    std::ifstream meta(dir + "/meta.json");
    return std::string(std::istreambuf_iterator<char>(meta), std::istreambuf_iterator<char>());
}

Var Ctx::p(const std::string& name, const std::vector<size_t>& shape, Init init) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    Param& param = ps.get_or_create(name, shape, init);
    Tensor t = param.value;
    t.requires_grad = training && param.trainable;
    Var v = ad::leaf(std::move(t));
    vars.emplace(name, v);
    return v;
}

const Tensor* Ctx::grad_of(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end() || it->second->grad.numel() == 0) return nullptr;
    return &it->second->grad;
}

Var linear(Ctx& c, const std::string& name, const Var& x, size_t dout, bool bias) {
    size_t din = x->value.cols();
    Var w = c.p(name + ".w", {din, dout}, Init::fan_in());
    Var y = ad::matmul(x, w);
    if (bias) y = ad::add_rowvec(y, c.p(name + ".b", {dout}, Init::zeros()));
    return y;
}

Var mha(Ctx& c, const std::string& name, const Var& q_in, const Var& kv_in, size_t heads,
        const std::vector<uint8_t>* mask) {
    size_t d = q_in->value.cols();
    Var q = linear(c, name + ".q", q_in, d);
    Var k = linear(c, name + ".k", kv_in, d);
    Var v = linear(c, name + ".v", kv_in, d);
    Var o = ad::attention(q, k, v, mask, heads);
    return linear(c, name + ".o", o, d);
}

Var layer_norm_p(Ctx& c, const std::string& name, const Var& x) {
    size_t d = x->value.cols();
    return ad::layer_norm(x, c.p(name + ".gamma", {d}, Init::ones()),
                          c.p(name + ".beta", {d}, Init::zeros()));
}

Var sa_block(Ctx& c, const std::string& name, const Var& x, size_t heads) {
    return layer_norm_p(c, name + ".ln", ad::add(x, mha(c, name + ".attn", x, x, heads)));
}

Var fft_block(Ctx& c, const std::string& name, const Var& x, size_t heads, size_t kernel,
              double dropout) {
    size_t d = x->value.cols();
    Var h = mha(c, name + ".attn", x, x, heads);
    h = ad::dropout(h, c.rate(dropout), c.next_seed());
    h = layer_norm_p(c, name + ".ln1", ad::add(x, h));
    Var f = conv1d_p(c, name + ".conv1", h, d, kernel);
    f = ad::gelu(f);
    f = conv1d_p(c, name + ".conv2", f, d, kernel);
    f = ad::dropout(f, c.rate(dropout), c.next_seed());
    return layer_norm_p(c, name + ".ln2", ad::add(h, f));
}

Var conv1d_p(Ctx& c, const std::string& name, const Var& x, size_t cout, size_t k, size_t dilation,
             size_t stride, Init winit) {
    size_t cin = x->value.cols();
    if (winit.kind == InitKind::FanIn)
        winit = Init::gauss(winit.scale / std::sqrt(double(cin * k)));
    Var w = c.p(name + ".w", {cout, cin, k}, winit);
    Var b = c.p(name + ".b", {cout}, Init::zeros());
    return ad::conv1d(x, w, b, dilation, stride);
}

Var rnn(Ctx& c, const std::string& name, const Var& x, size_t hidden) {
    size_t t = x->value.rows();
    Var wx = c.p(name + ".wx", {x->value.cols(), hidden}, Init::fan_in());
    Var wh = c.p(name + ".wh", {hidden, hidden}, Init::fan_in());
    Var b = c.p(name + ".b", {hidden}, Init::zeros());
    Var xw = ad::add_rowvec(ad::matmul(x, wx), b);  // T x hidden
    std::vector<Var> outs;
    outs.reserve(t);
    Var h;
    for (size_t i = 0; i < t; ++i) {
        Var step = ad::slice_rows(xw, i, i + 1);
        if (h) step = ad::add(step, ad::matmul(h, wh));
        h = ad::tanh_(step);
        outs.push_back(ad::reshape(h, {hidden}));
    }
    return ad::stack_rows(outs);
}

Tensor sinusoidal_positions(size_t n, size_t d) {
    Tensor t({n, d});
    for (size_t pos = 0; pos < n; ++pos)
        for (size_t i = 0; i < d; ++i) {
            double angle = double(pos) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
            t.data[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return t;
}

Tensor diffusion_step_embedding(size_t step, size_t dim) {
    Tensor t({dim});
    for (size_t i = 0; i < dim / 2; ++i) {
        double angle = double(step) / std::pow(10000.0, double(i) / double(dim / 2));
        t.data[i] = std::sin(angle);
        t.data[dim / 2 + i] = std::cos(angle);
    }
    return t;
}

}  // namespace psinger::nn
