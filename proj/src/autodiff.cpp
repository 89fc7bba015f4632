#include "psinger/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "psinger/kernels.hpp"
#include "psinger/rng.hpp"

namespace psinger::ad {

namespace diag {
std::atomic<long long> fully_masked_rows{0};
}

namespace {

Var make(Tensor value, std::vector<Var> parents, const char* op, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op = op;
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(bp);
    return n;
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
}

bool ng(const Var& v) { return v->requires_grad; }

}  // namespace

Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->requires_grad = t.requires_grad;
    n->value = std::move(t);
    return n;
}

Var constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
}

void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::runtime_error("backward: root must be scalar, got " + root->value.shape_str());
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Var, size_t>> stack;
    stack.push_back({root, 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Var child = node->parents[idx++];
            if (!visited.count(child.get())) {
                visited.insert(child.get());
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(node.get());
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (n->requires_grad) n->grad = Tensor::zeros(n->value.shape);
    if (!root->requires_grad) return;
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

// ---- elementwise / structural ----

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) shape_fail("add", a->value, b->value);
    Tensor y = a->value;
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] += b->value.data[i];
    return make(std::move(y), {a, b}, "add", [](Node& s) {
        for (int p = 0; p < 2; ++p)
            if (ng(s.parents[p]))
                for (size_t i = 0; i < s.grad.numel(); ++i)
                    s.parents[p]->grad.data[i] += s.grad.data[i];
    });
}

Var sub(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) shape_fail("sub", a->value, b->value);
    Tensor y = a->value;
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] -= b->value.data[i];
    return make(std::move(y), {a, b}, "sub", [](Node& s) {
        if (ng(s.parents[0]))
            for (size_t i = 0; i < s.grad.numel(); ++i)
                s.parents[0]->grad.data[i] += s.grad.data[i];
        if (ng(s.parents[1]))
            for (size_t i = 0; i < s.grad.numel(); ++i)
                s.parents[1]->grad.data[i] -= s.grad.data[i];
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) shape_fail("mul", a->value, b->value);
    Tensor y = a->value;
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] *= b->value.data[i];
    return make(std::move(y), {a, b}, "mul", [](Node& s) {
        const Tensor& av = s.parents[0]->value;
        const Tensor& bv = s.parents[1]->value;
        if (ng(s.parents[0]))
            for (size_t i = 0; i < s.grad.numel(); ++i)
                s.parents[0]->grad.data[i] += s.grad.data[i] * bv.data[i];
        if (ng(s.parents[1]))
            for (size_t i = 0; i < s.grad.numel(); ++i)
                s.parents[1]->grad.data[i] += s.grad.data[i] * av.data[i];
    });
}

Var scale(const Var& a, double c) {
    Tensor y = a->value;
    for (auto& v : y.data) v *= c;
    return make(std::move(y), {a}, "scale", [c](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i)
            s.parents[0]->grad.data[i] += c * s.grad.data[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor y = a->value;
    for (auto& v : y.data) v += c;
    return make(std::move(y), {a}, "add_scalar", [](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i)
            s.parents[0]->grad.data[i] += s.grad.data[i];
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    if (x->value.rank() != 2 || v->value.numel() != x->value.cols())
        shape_fail("add_rowvec", x->value, v->value);
    Tensor y = x->value;
    size_t n = y.rows(), d = y.cols();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) y.data[i * d + j] += v->value.data[j];
    return make(std::move(y), {x, v}, "add_rowvec", [n, d](Node& s) {
        if (ng(s.parents[0]))
            for (size_t i = 0; i < n * d; ++i) s.parents[0]->grad.data[i] += s.grad.data[i];
        if (ng(s.parents[1]))
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j) s.parents[1]->grad.data[j] += s.grad.data[i * d + j];
    });
}

Var tile_rows(const Var& v, size_t n) {
    size_t d = v->value.numel();
    Tensor y({n, d});
    for (size_t i = 0; i < n; ++i)
        std::memcpy(&y.data[i * d], v->value.data.data(), d * sizeof(double));
    return make(std::move(y), {v}, "tile_rows", [n, d](Node& s) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) s.parents[0]->grad.data[j] += s.grad.data[i * d + j];
    });
}

Var transpose(const Var& a) {
    if (a->value.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + a->value.shape_str());
    size_t n = a->value.rows(), d = a->value.cols();
    Tensor y({d, n});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) y.data[j * n + i] = a->value.data[i * d + j];
    return make(std::move(y), {a}, "transpose", [n, d](Node& s) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j)
                s.parents[0]->grad.data[i * d + j] += s.grad.data[j * n + i];
    });
}

Var swap_axes01(const Var& a) {
    if (a->value.rank() < 2)
        throw ShapeError("swap_axes01: expected rank >= 2, got " + a->value.shape_str());
    size_t A = a->value.dim(0), B = a->value.dim(1), rest = a->value.numel() / (A * B);
    std::vector<size_t> shape = a->value.shape;
    std::swap(shape[0], shape[1]);
    Tensor y(shape);
    for (size_t i = 0; i < A; ++i)
        for (size_t j = 0; j < B; ++j)
            std::memcpy(&y.data[(j * A + i) * rest], &a->value.data[(i * B + j) * rest],
                        rest * sizeof(double));
    return make(std::move(y), {a}, "swap_axes01", [A, B, rest](Node& s) {
        for (size_t i = 0; i < A; ++i)
            for (size_t j = 0; j < B; ++j)
                for (size_t r = 0; r < rest; ++r)
                    s.parents[0]->grad.data[(i * B + j) * rest + r] +=
                        s.grad.data[(j * A + i) * rest + r];
    });
}

Var reshape(const Var& a, std::vector<size_t> shape) {
    if (Tensor::numel_of(shape) != a->value.numel())
        throw ShapeError("reshape: cannot view " + a->value.shape_str() + " as " +
                         Tensor::shape_str(shape));
    Tensor y = a->value;
    y.shape = std::move(shape);
    return make(std::move(y), {a}, "reshape", [](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i)
            s.parents[0]->grad.data[i] += s.grad.data[i];
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.rows() != b->value.rows())
        shape_fail("concat_cols", a->value, b->value);
    size_t n = a->value.rows(), da = a->value.cols(), db = b->value.cols();
    Tensor y({n, da + db});
    for (size_t i = 0; i < n; ++i) {
        std::memcpy(&y.data[i * (da + db)], &a->value.data[i * da], da * sizeof(double));
        std::memcpy(&y.data[i * (da + db) + da], &b->value.data[i * db], db * sizeof(double));
    }
    return make(std::move(y), {a, b}, "concat_cols", [n, da, db](Node& s) {
        for (size_t i = 0; i < n; ++i) {
            if (ng(s.parents[0]))
                for (size_t j = 0; j < da; ++j)
                    s.parents[0]->grad.data[i * da + j] += s.grad.data[i * (da + db) + j];
            if (ng(s.parents[1]))
                for (size_t j = 0; j < db; ++j)
                    s.parents[1]->grad.data[i * db + j] += s.grad.data[i * (da + db) + da + j];
        }
    });
}

Var concat_rows(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.cols() != b->value.cols())
        shape_fail("concat_rows", a->value, b->value);
    size_t na = a->value.rows(), nb = b->value.rows(), d = a->value.cols();
    Tensor y({na + nb, d});
    std::memcpy(y.data.data(), a->value.data.data(), na * d * sizeof(double));
    std::memcpy(y.data.data() + na * d, b->value.data.data(), nb * d * sizeof(double));
    return make(std::move(y), {a, b}, "concat_rows", [na, nb, d](Node& s) {
        if (ng(s.parents[0]))
            for (size_t i = 0; i < na * d; ++i) s.parents[0]->grad.data[i] += s.grad.data[i];
        if (ng(s.parents[1]))
            for (size_t i = 0; i < nb * d; ++i)
                s.parents[1]->grad.data[i] += s.grad.data[na * d + i];
    });
}

Var slice_cols(const Var& x, size_t from, size_t to) {
    if (x->value.rank() != 2 || to > x->value.cols() || from >= to)
        throw ShapeError("slice_cols: bad range on " + x->value.shape_str());
    size_t n = x->value.rows(), d = x->value.cols(), w = to - from;
    Tensor y({n, w});
    for (size_t i = 0; i < n; ++i)
        std::memcpy(&y.data[i * w], &x->value.data[i * d + from], w * sizeof(double));
    return make(std::move(y), {x}, "slice_cols", [n, d, w, from](Node& s) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < w; ++j)
                s.parents[0]->grad.data[i * d + from + j] += s.grad.data[i * w + j];
    });
}

Var slice_rows(const Var& x, size_t from, size_t to) {
    if (x->value.rank() != 2 || to > x->value.rows() || from >= to)
        throw ShapeError("slice_rows: bad range on " + x->value.shape_str());
    size_t d = x->value.cols(), h = to - from;
    Tensor y({h, d});
    std::memcpy(y.data.data(), &x->value.data[from * d], h * d * sizeof(double));
    return make(std::move(y), {x}, "slice_rows", [d, h, from](Node& s) {
        for (size_t i = 0; i < h * d; ++i)
            s.parents[0]->grad.data[from * d + i] += s.grad.data[i];
    });
}

Var repeat_rows(const Var& x, const std::vector<int>& counts) {
    if (x->value.rank() != 2 || counts.size() != x->value.rows())
        throw ShapeError("repeat_rows: counts length must equal rows of " + x->value.shape_str());
    size_t total = 0;
    for (int c : counts) {
        if (c < 0) throw std::runtime_error("repeat_rows: negative count");
        total += size_t(c);
    }
    if (total == 0) throw std::runtime_error("repeat_rows: all counts zero (empty expansion)");
    size_t d = x->value.cols();
    Tensor y({total, d});
    size_t r = 0;
    for (size_t i = 0; i < counts.size(); ++i)
        for (int c = 0; c < counts[i]; ++c, ++r)
            std::memcpy(&y.data[r * d], &x->value.data[i * d], d * sizeof(double));
    auto cnt = counts;
    return make(std::move(y), {x}, "repeat_rows", [cnt, d](Node& s) {
        size_t r = 0;
        for (size_t i = 0; i < cnt.size(); ++i)
            for (int c = 0; c < cnt[i]; ++c, ++r)
                for (size_t j = 0; j < d; ++j)
                    s.parents[0]->grad.data[i * d + j] += s.grad.data[r * d + j];
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows");
    size_t d = rows[0]->value.numel();
    Tensor y({rows.size(), d});
    std::vector<Var> parents;
    parents.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]->value.numel() != d)
            shape_fail("stack_rows", rows[0]->value, rows[i]->value);
        std::memcpy(&y.data[i * d], rows[i]->value.data.data(), d * sizeof(double));
        parents.push_back(rows[i]);
    }
    return make(std::move(y), std::move(parents), "stack_rows", [d](Node& s) {
        for (size_t i = 0; i < s.parents.size(); ++i)
            if (ng(s.parents[i]))
                for (size_t j = 0; j < d; ++j)
                    s.parents[i]->grad.data[j] += s.grad.data[i * d + j];
    });
}

Var detach(const Var& x) {
    Tensor t = x->value;
    t.requires_grad = false;
    return leaf(std::move(t));
}

// ---- nonlinearities ----

Var gelu(const Var& x) {
    Tensor y = x->value;
    for (auto& v : y.data) v = 0.5 * v * (1.0 + std::erf(v / M_SQRT2));
    return make(std::move(y), {x}, "gelu", [](Node& s) {
        const Tensor& xv = s.parents[0]->value;
        for (size_t i = 0; i < s.grad.numel(); ++i) {
            double v = xv.data[i];
            double d = 0.5 * (1.0 + std::erf(v / M_SQRT2)) +
                       v * std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
            s.parents[0]->grad.data[i] += s.grad.data[i] * d;
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor y = x->value;
    for (auto& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
    return make(std::move(y), {x}, "sigmoid", [](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i) {
            double yv = s.value.data[i];
            s.parents[0]->grad.data[i] += s.grad.data[i] * yv * (1.0 - yv);
        }
    });
}

Var tanh_(const Var& x) {
    Tensor y = x->value;
    for (auto& v : y.data) v = std::tanh(v);
    return make(std::move(y), {x}, "tanh", [](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i) {
            double yv = s.value.data[i];
            s.parents[0]->grad.data[i] += s.grad.data[i] * (1.0 - yv * yv);
        }
    });
}

Var relu(const Var& x) {
    Tensor y = x->value;
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    return make(std::move(y), {x}, "relu", [](Node& s) {
        const Tensor& xv = s.parents[0]->value;
        for (size_t i = 0; i < s.grad.numel(); ++i)
            if (xv.data[i] > 0.0) s.parents[0]->grad.data[i] += s.grad.data[i];
    });
}

namespace {

Var softmax_impl(const Var& x, const std::vector<uint8_t>* mask) {
    if (x->value.rank() != 2) throw ShapeError("softmax: expected 2-D, got " + x->value.shape_str());
    size_t n = x->value.rows(), d = x->value.cols();
    if (mask && mask->size() != n * d)
        throw ShapeError("softmax: mask size mismatch for " + x->value.shape_str());
    Tensor y({n, d});
    for (size_t i = 0; i < n; ++i) {
        double mx = -HUGE_VAL;
        for (size_t j = 0; j < d; ++j)
            if (!mask || (*mask)[i * d + j]) mx = std::max(mx, x->value.data[i * d + j]);
        if (mx == -HUGE_VAL) {
            // fully masked row: defined to output zeros
            diag::fully_masked_rows.fetch_add(1, std::memory_order_relaxed);
            continue;
        }
        double z = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double e = (!mask || (*mask)[i * d + j]) ? std::exp(x->value.data[i * d + j] - mx) : 0.0;
            y.data[i * d + j] = e;
            z += e;
        }
        for (size_t j = 0; j < d; ++j) y.data[i * d + j] /= z;
    }
    return make(std::move(y), {x}, "softmax", [n, d](Node& s) {
        for (size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j) dot += s.grad.data[i * d + j] * s.value.data[i * d + j];
            for (size_t j = 0; j < d; ++j)
                s.parents[0]->grad.data[i * d + j] +=
                    s.value.data[i * d + j] * (s.grad.data[i * d + j] - dot);
        }
    });
}

}  // namespace

Var softmax_rows(const Var& x) { return softmax_impl(x, nullptr); }

Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& mask) {
    return softmax_impl(x, &mask);
}

Var dropout(const Var& x, double rate, uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;  // identity by contract
    Rng rng(seed);
    double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x->value.numel());
    Tensor y = x->value;
    for (size_t i = 0; i < y.numel(); ++i) {
        (*mask)[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
        y.data[i] *= (*mask)[i];
    }
    return make(std::move(y), {x}, "dropout", [mask](Node& s) {
        for (size_t i = 0; i < s.grad.numel(); ++i)
            s.parents[0]->grad.data[i] += s.grad.data[i] * (*mask)[i];
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
    if (x->value.rank() != 2) throw ShapeError("layer_norm: expected 2-D, got " + x->value.shape_str());
    size_t n = x->value.rows(), d = x->value.cols();
    if (gamma->value.numel() != d || beta->value.numel() != d)
        shape_fail("layer_norm", x->value, gamma->value);
    constexpr double eps = 1e-12;
    Tensor y({n, d});
    auto xhat = std::make_shared<std::vector<double>>(n * d);
    auto rstd = std::make_shared<std::vector<double>>(n);
    for (size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += x->value.data[i * d + j];
        mu /= double(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = x->value.data[i * d + j] - mu;
            var += c * c;
        }
        var /= double(d);
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[i] = rs;
        for (size_t j = 0; j < d; ++j) {
            double xh = (x->value.data[i * d + j] - mu) * rs;
            (*xhat)[i * d + j] = xh;
            y.data[i * d + j] = gamma->value.data[j] * xh + beta->value.data[j];
        }
    }
    return make(std::move(y), {x, gamma, beta}, "layer_norm", [n, d, xhat, rstd](Node& s) {
        const Tensor& gv = s.parents[1]->value;
        for (size_t i = 0; i < n; ++i) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (size_t j = 0; j < d; ++j) {
                double gg = s.grad.data[i * d + j] * gv.data[j];
                sum_g += gg;
                sum_gx += gg * (*xhat)[i * d + j];
            }
            if (ng(s.parents[0])) {
                for (size_t j = 0; j < d; ++j) {
                    double gg = s.grad.data[i * d + j] * gv.data[j];
                    s.parents[0]->grad.data[i * d + j] +=
                        (*rstd)[i] *
                        (gg - sum_g / double(d) - (*xhat)[i * d + j] * sum_gx / double(d));
                }
            }
            if (ng(s.parents[1]))
                for (size_t j = 0; j < d; ++j)
                    s.parents[1]->grad.data[j] += s.grad.data[i * d + j] * (*xhat)[i * d + j];
            if (ng(s.parents[2]))
                for (size_t j = 0; j < d; ++j) s.parents[2]->grad.data[j] += s.grad.data[i * d + j];
        }
    });
}

// ---- linear algebra / convolution ----

Var matmul(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.cols() != b->value.rows())
        shape_fail("matmul", a->value, b->value);
    size_t m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
    Tensor y({m, n});
    kernels::matmul(a->value.data.data(), b->value.data.data(), y.data.data(), m, k, n);
    return make(std::move(y), {a, b}, "matmul", [m, k, n](Node& s) {
        const Tensor& av = s.parents[0]->value;
        const Tensor& bv = s.parents[1]->value;
        if (ng(s.parents[0])) {
            std::vector<double> tmp(m * k);
            kernels::matmul(s.grad.data.data(), bv.data.data(), tmp.data(), m, n, k, false, true);
            for (size_t i = 0; i < m * k; ++i) s.parents[0]->grad.data[i] += tmp[i];
        }
        if (ng(s.parents[1])) {
            std::vector<double> tmp(k * n);
            kernels::matmul(av.data.data(), s.grad.data.data(), tmp.data(), k, m, n, true, false);
            for (size_t i = 0; i < k * n; ++i) s.parents[1]->grad.data[i] += tmp[i];
        }
    });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
    if (table->value.rank() != 2) throw ShapeError("embedding: table must be 2-D");
    size_t e = table->value.rows(), d = table->value.cols();
    for (int id : ids)
        if (id < 0 || size_t(id) >= e)
            throw std::runtime_error("embedding: id " + std::to_string(id) +
                                     " out of range [0, " + std::to_string(e) + ")");
    Tensor y({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(&y.data[i * d], &table->value.data[size_t(ids[i]) * d], d * sizeof(double));
    auto idx = ids;
    return make(std::move(y), {table}, "embedding", [idx, d](Node& s) {
        for (size_t i = 0; i < idx.size(); ++i)
            for (size_t j = 0; j < d; ++j)
                s.parents[0]->grad.data[size_t(idx[i]) * d + j] += s.grad.data[i * d + j];
    });
}

Var conv1d(const Var& x, const Var& w, const Var& b, size_t dilation, size_t stride) {
    if (x->value.rank() != 2 || w->value.rank() != 3 || x->value.cols() != w->value.dim(1))
        shape_fail("conv1d", x->value, w->value);
    size_t t = x->value.rows(), cin = x->value.cols();
    size_t cout = w->value.dim(0), k = w->value.dim(2);
    if (b->value.numel() != cout) shape_fail("conv1d bias", w->value, b->value);
    size_t eff = dilation * (k - 1) + 1, pad = (eff - 1) / 2;
    size_t tout = kernels::conv_out(t, k, stride, pad, dilation);
    auto cols = std::make_shared<std::vector<double>>(tout * cin * k);
    kernels::im2col_1d(x->value.data.data(), t, cin, k, dilation, stride, cols->data());
    Tensor y({tout, cout});
    kernels::matmul(cols->data(), w->value.data.data(), y.data.data(), tout, cin * k, cout, false,
                    true);
    for (size_t i = 0; i < tout; ++i)
        for (size_t j = 0; j < cout; ++j) y.data[i * cout + j] += b->value.data[j];
    return make(std::move(y), {x, w, b}, "conv1d",
                [t, cin, cout, k, dilation, stride, tout, cols](Node& s) {
                    const double* gy = s.grad.data.data();
                    if (ng(s.parents[2]))
                        for (size_t i = 0; i < tout; ++i)
                            for (size_t j = 0; j < cout; ++j)
                                s.parents[2]->grad.data[j] += gy[i * cout + j];
                    if (ng(s.parents[1])) {
                        std::vector<double> tmp(cout * cin * k);
                        kernels::matmul(gy, cols->data(), tmp.data(), cout, tout, cin * k, true,
                                        false);
                        for (size_t i = 0; i < tmp.size(); ++i)
                            s.parents[1]->grad.data[i] += tmp[i];
                    }
                    if (ng(s.parents[0])) {
                        std::vector<double> gcols(tout * cin * k);
                        kernels::matmul(gy, s.parents[1]->value.data.data(), gcols.data(), tout,
                                        cout, cin * k);
                        kernels::col2im_1d(gcols.data(), t, cin, k, dilation, stride,
                                           s.parents[0]->grad.data.data());
                    }
                });
}

Var conv2d(const Var& x, const Var& w, const Var& b, size_t stride, size_t pad) {
    if (x->value.rank() != 4 || w->value.rank() != 4 || x->value.dim(1) != w->value.dim(1))
        shape_fail("conv2d", x->value, w->value);
    size_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    size_t cout = w->value.dim(0), k = w->value.dim(2);
    if (b->value.numel() != cout) shape_fail("conv2d bias", w->value, b->value);
    size_t ho = kernels::conv_out(h, k, stride, pad), wo = kernels::conv_out(wd, k, stride, pad);
    size_t rows = n * ho * wo, patch = c * k * k;
    auto cols = std::make_shared<std::vector<double>>(rows * patch);
    kernels::im2col_2d(x->value.data.data(), n, c, h, wd, k, stride, pad, cols->data());
    std::vector<double> ynhwc(rows * cout);
    kernels::matmul(cols->data(), w->value.data.data(), ynhwc.data(), rows, patch, cout, false,
                    true);
    Tensor y({n, cout, ho, wo});
    for (size_t ni = 0; ni < n; ++ni)
        for (size_t oy = 0; oy < ho; ++oy)
            for (size_t ox = 0; ox < wo; ++ox) {
                size_t r = (ni * ho + oy) * wo + ox;
                for (size_t co = 0; co < cout; ++co)
                    y.data[((ni * cout + co) * ho + oy) * wo + ox] =
                        ynhwc[r * cout + co] + b->value.data[co];
            }
    return make(std::move(y), {x, w, b}, "conv2d",
                [n, c, h, wd, cout, k, stride, pad, ho, wo, rows, patch, cols](Node& s) {
                    std::vector<double> gy(rows * cout);
                    for (size_t ni = 0; ni < n; ++ni)
                        for (size_t oy = 0; oy < ho; ++oy)
                            for (size_t ox = 0; ox < wo; ++ox) {
                                size_t r = (ni * ho + oy) * wo + ox;
                                for (size_t co = 0; co < cout; ++co)
                                    gy[r * cout + co] =
                                        s.grad.data[((ni * cout + co) * ho + oy) * wo + ox];
                            }
                    if (ng(s.parents[2]))
                        for (size_t r = 0; r < rows; ++r)
                            for (size_t co = 0; co < cout; ++co)
                                s.parents[2]->grad.data[co] += gy[r * cout + co];
                    if (ng(s.parents[1])) {
                        std::vector<double> tmp(cout * patch);
                        kernels::matmul(gy.data(), cols->data(), tmp.data(), cout, rows, patch,
                                        true, false);
                        for (size_t i = 0; i < tmp.size(); ++i)
                            s.parents[1]->grad.data[i] += tmp[i];
                    }
                    if (ng(s.parents[0])) {
                        std::vector<double> gcols(rows * patch);
                        kernels::matmul(gy.data(), s.parents[1]->value.data.data(), gcols.data(),
                                        rows, cout, patch);
                        kernels::col2im_2d(gcols.data(), n, c, h, wd, k, stride, pad,
                                           s.parents[0]->grad.data.data());
                    }
                });
}

Var conv3d(const Var& x, const Var& w, const Var& b, size_t st, size_t sh, size_t sw, size_t pt,
           size_t ph, size_t pw) {
    if (x->value.rank() != 4 || w->value.rank() != 5 || x->value.dim(0) != w->value.dim(1))
        shape_fail("conv3d", x->value, w->value);
    size_t c = x->value.dim(0), t = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    size_t cout = w->value.dim(0), kt = w->value.dim(2), kh = w->value.dim(3), kw = w->value.dim(4);
    if (b->value.numel() != cout) shape_fail("conv3d bias", w->value, b->value);
    size_t to = kernels::conv_out(t, kt, st, pt), ho = kernels::conv_out(h, kh, sh, ph),
           wo = kernels::conv_out(wd, kw, sw, pw);
    size_t rows = to * ho * wo, patch = c * kt * kh * kw;
    auto cols = std::make_shared<std::vector<double>>(rows * patch);
    kernels::im2col_3d(x->value.data.data(), c, t, h, wd, kt, kh, kw, st, sh, sw, pt, ph, pw,
                       cols->data());
    std::vector<double> ythwc(rows * cout);
    kernels::matmul(cols->data(), w->value.data.data(), ythwc.data(), rows, patch, cout, false,
                    true);
    Tensor y({cout, to, ho, wo});
    for (size_t r = 0; r < rows; ++r)
        for (size_t co = 0; co < cout; ++co)
            y.data[co * rows + r] = ythwc[r * cout + co] + b->value.data[co];
    return make(std::move(y), {x, w, b}, "conv3d",
                [c, t, h, wd, cout, kt, kh, kw, st, sh, sw, pt, ph, pw, rows, patch, cols](Node& s) {
                    std::vector<double> gy(rows * cout);
                    for (size_t r = 0; r < rows; ++r)
                        for (size_t co = 0; co < cout; ++co)
                            gy[r * cout + co] = s.grad.data[co * rows + r];
                    if (ng(s.parents[2]))
                        for (size_t r = 0; r < rows; ++r)
                            for (size_t co = 0; co < cout; ++co)
                                s.parents[2]->grad.data[co] += gy[r * cout + co];
                    if (ng(s.parents[1])) {
                        std::vector<double> tmp(cout * patch);
                        kernels::matmul(gy.data(), cols->data(), tmp.data(), cout, rows, patch,
                                        true, false);
                        for (size_t i = 0; i < tmp.size(); ++i)
                            s.parents[1]->grad.data[i] += tmp[i];
                    }
                    if (ng(s.parents[0])) {
                        std::vector<double> gcols(rows * patch);
                        kernels::matmul(gy.data(), s.parents[1]->value.data.data(), gcols.data(),
                                        rows, cout, patch);
                        kernels::col2im_3d(gcols.data(), c, t, h, wd, kt, kh, kw, st, sh, sw, pt,
                                           ph, pw, s.parents[0]->grad.data.data());
                    }
                });
}

Var avgpool_spatial(const Var& x) {
    if (x->value.rank() != 4) throw ShapeError("avgpool_spatial: expected 4-D");
    size_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    Tensor y({n, c});
    double inv = 1.0 / double(h * w);
    for (size_t ni = 0; ni < n; ++ni)
        for (size_t ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            const double* p = &x->value.data[(ni * c + ci) * h * w];
            for (size_t i = 0; i < h * w; ++i) acc += p[i];
            y.data[ni * c + ci] = acc * inv;
        }
    return make(std::move(y), {x}, "avgpool_spatial", [n, c, h, w, inv](Node& s) {
        for (size_t ni = 0; ni < n; ++ni)
            for (size_t ci = 0; ci < c; ++ci) {
                double g = s.grad.data[ni * c + ci] * inv;
                double* p = &s.parents[0]->grad.data[(ni * c + ci) * h * w];
                for (size_t i = 0; i < h * w; ++i) p[i] += g;
            }
    });
}

// ---- reductions / losses ----

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x->value.data) acc += v;
    return make(Tensor::scalar(acc), {x}, "sum", [](Node& s) {
        double g = s.grad.data[0];
        for (auto& v : s.parents[0]->grad.data) v += g;
    });
}

Var mean(const Var& x) {
    double inv = 1.0 / double(x->value.numel());
    double acc = 0.0;
    for (double v : x->value.data) acc += v;
    return make(Tensor::scalar(acc * inv), {x}, "mean", [inv](Node& s) {
        double g = s.grad.data[0] * inv;
        for (auto& v : s.parents[0]->grad.data) v += g;
    });
}

Var rows_mean(const Var& x) {
    if (x->value.rank() != 2) throw ShapeError("rows_mean: expected 2-D");
    size_t n = x->value.rows(), d = x->value.cols();
    Tensor y({d});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) y.data[j] += x->value.data[i * d + j];
    for (auto& v : y.data) v /= double(n);
    return make(std::move(y), {x}, "rows_mean", [n, d](Node& s) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j)
                s.parents[0]->grad.data[i * d + j] += s.grad.data[j] / double(n);
    });
}

Var sumsq(const Var& x) {
    double acc = 0.0;
    for (double v : x->value.data) acc += v * v;
    return make(Tensor::scalar(acc), {x}, "sumsq", [](Node& s) {
        double g = s.grad.data[0];
        const Tensor& xv = s.parents[0]->value;
        for (size_t i = 0; i < xv.numel(); ++i) s.parents[0]->grad.data[i] += 2.0 * g * xv.data[i];
    });
}

Var mse(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) shape_fail("mse", a->value, b->value);
    size_t n = a->value.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = a->value.data[i] - b->value.data[i];
        acc += d * d;
    }
    return make(Tensor::scalar(acc / double(n)), {a, b}, "mse", [n](Node& s) {
        double g = s.grad.data[0] * 2.0 / double(n);
        const Tensor& av = s.parents[0]->value;
        const Tensor& bv = s.parents[1]->value;
        for (size_t i = 0; i < n; ++i) {
            double d = g * (av.data[i] - bv.data[i]);
            if (ng(s.parents[0])) s.parents[0]->grad.data[i] += d;
            if (ng(s.parents[1])) s.parents[1]->grad.data[i] -= d;
        }
    });
}

Var bce(const Var& p, const Var& y) {
    if (!p->value.same_shape(y->value)) shape_fail("bce", p->value, y->value);
    size_t n = p->value.numel();
    constexpr double eps = 1e-12;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double pc = std::clamp(p->value.data[i], eps, 1.0 - eps);
        double t = y->value.data[i];
        acc -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    return make(Tensor::scalar(acc / double(n)), {p, y}, "bce", [n](Node& s) {
        constexpr double eps = 1e-12;
        double g = s.grad.data[0] / double(n);
        for (size_t i = 0; i < n; ++i) {
            double pc = std::clamp(s.parents[0]->value.data[i], eps, 1.0 - eps);
            double t = s.parents[1]->value.data[i];
            if (ng(s.parents[0]))
                s.parents[0]->grad.data[i] += g * (-(t / pc) + (1.0 - t) / (1.0 - pc));
            if (ng(s.parents[1]))
                s.parents[1]->grad.data[i] += g * (std::log(1.0 - pc) - std::log(pc));
        }
    });
}

Var l2_normalize(const Var& v) {
    size_t d = v->value.numel();
    double nrm = 0.0;
    for (double x : v->value.data) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) throw std::runtime_error("l2_normalize: zero vector");
    Tensor y = v->value;
    for (auto& x : y.data) x /= nrm;
    return make(std::move(y), {v}, "l2_normalize", [d, nrm](Node& s) {
        const Tensor& vv = s.parents[0]->value;
        double dot = 0.0;
        for (size_t i = 0; i < d; ++i) dot += s.grad.data[i] * vv.data[i];
        for (size_t i = 0; i < d; ++i)
            s.parents[0]->grad.data[i] +=
                s.grad.data[i] / nrm - vv.data[i] * dot / (nrm * nrm * nrm);
    });
}

Var attention(const Var& q, const Var& k, const Var& v, const std::vector<uint8_t>* mask,
              size_t heads) {
    if (q->value.rank() != 2 || k->value.rank() != 2 || v->value.rank() != 2)
        throw ShapeError("attention: expected 2-D inputs");
    size_t d = q->value.cols();
    if (k->value.cols() != d || !k->value.same_shape(v->value))
        shape_fail("attention", k->value, v->value);
    if (heads == 0 || d % heads != 0)
        throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    size_t dh = d / heads;
    double inv_sqrt = 1.0 / std::sqrt(double(dh));
    Var out;
    for (size_t h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Var probs = mask ? masked_softmax_rows(scores, *mask) : softmax_rows(scores);
        Var oh = matmul(probs, vh);
        out = h == 0 ? oh : concat_cols(out, oh);
    }
    return out;
}

double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double step) {
    if (!(step > 1e-7 && step < 1e-3))
        throw std::runtime_error("grad_check: step must lie in (1e-7, 1e-3)");
    std::vector<Var> leaves;
    for (auto t : inputs) {
        t.requires_grad = true;
        leaves.push_back(leaf(std::move(t)));
    }
    Var out = f(leaves);
    if (out->value.numel() != 1)
        throw std::runtime_error("grad_check: subgraph output must be scalar");
    backward(out);

    auto eval = [&](const std::vector<Tensor>& ins) {
        std::vector<Var> ls;
        for (auto t : ins) {
            t.requires_grad = false;
            ls.push_back(leaf(std::move(t)));
        }
        return f(ls)->value.data[0];
    };

    double max_err = 0.0;
    std::vector<Tensor> work = inputs;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].numel(); ++j) {
            double orig = work[i].data[j];
            work[i].data[j] = orig + step;
            double fp = eval(work);
            work[i].data[j] = orig - step;
            double fm = eval(work);
            work[i].data[j] = orig;
            double central = (fp - fm) / (2.0 * step);
            double analytic = leaves[i]->grad.numel() ? leaves[i]->grad.data[j] : 0.0;
            double err = std::abs(analytic - central) / std::max(1.0, std::abs(central));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace psinger::ad
