#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "psinger/tensor.hpp"

// Reverse-mode autodiff over Tensor. A graph is a DAG of shared_ptr nodes
// built by the op functions; backward() walks it in reverse topological
// order exactly once per node. A graph is confined to one thread; tensors
// themselves are values and freely shareable.
namespace psinger::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated by backward()
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // reads grad, accumulates into parents' grads
    const char* op = "leaf";
};

namespace diag {
// Fully masked attention rows are defined to output zeros; this counts them.
extern std::atomic<long long> fully_masked_rows;
}  // namespace diag

Var leaf(Tensor t);  // requires_grad taken from the tensor flag
Var constant(Tensor t);

// root must be a scalar (numel 1); fills .grad of every participating node
void backward(const Var& root);

// ---- elementwise / structural ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var add_rowvec(const Var& x, const Var& v);  // x: n x d, v: d
Var tile_rows(const Var& v, size_t n);       // v: d -> n x d
Var transpose(const Var& a);                 // 2-D
Var swap_axes01(const Var& a);               // (A,B,rest...) -> (B,A,rest...)
Var reshape(const Var& a, std::vector<size_t> shape);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& x, size_t from, size_t to);
Var slice_rows(const Var& x, size_t from, size_t to);
Var repeat_rows(const Var& x, const std::vector<int>& counts);
Var stack_rows(const std::vector<Var>& rows);  // k vectors of d -> k x d
Var detach(const Var& x);

// ---- nonlinearities ----
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var tanh_(const Var& x);
Var relu(const Var& x);
Var softmax_rows(const Var& x);
// mask: n_q x n_k, nonzero = attend; fully masked rows output zeros
Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& mask);
Var dropout(const Var& x, double rate, uint64_t seed);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta);

// ---- linear algebra / convolution ----
Var matmul(const Var& a, const Var& b);
Var embedding(const Var& table, const std::vector<int>& ids);
// x: T x Cin (time-major), w: Cout x Cin x K, b: Cout; zero "same" padding
Var conv1d(const Var& x, const Var& w, const Var& b, size_t dilation = 1, size_t stride = 1);
// x: N x C x H x W, w: Cout x C x K x K, b: Cout
Var conv2d(const Var& x, const Var& w, const Var& b, size_t stride, size_t pad);
// x: C x T x H x W, w: Cout x C x Kt x Kh x Kw, b: Cout
Var conv3d(const Var& x, const Var& w, const Var& b, size_t st, size_t sh, size_t sw, size_t pt,
           size_t ph, size_t pw);
Var avgpool_spatial(const Var& x);  // N x C x H x W -> N x C

// ---- reductions / losses ----
Var sum(const Var& x);
Var mean(const Var& x);
Var rows_mean(const Var& x);  // n x d -> d
Var sumsq(const Var& x);      // scalar sum of squares
Var mse(const Var& a, const Var& b);
Var bce(const Var& p, const Var& y);  // p: probabilities, y: targets in [0,1]
Var l2_normalize(const Var& v);       // 1-D

// Scaled dot-product attention with optional boolean mask and multi-head
// split. Q: n_q x d, K/V: n_k x d; d must divide by heads.
Var attention(const Var& q, const Var& k, const Var& v, const std::vector<uint8_t>* mask,
              size_t heads);

// Finite-difference gradient checker. f maps leaf vars to a scalar Var.
// Returns max over input entries of |analytic - central| / max(1, |central|).
using GraphFn = std::function<Var(const std::vector<Var>&)>;
double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double step);

}  // namespace psinger::ad
