#include "tadsr/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "tadsr/error.hpp"

namespace tadsr::ag {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const Var& in : inputs) {
        if (in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (const Var& in : inputs) node->parents.push_back(in.ptr());
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

bool wants(const Node& self, std::size_t i) {
    return self.parents[i] && self.parents[i]->requires_grad;
}

void check_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

void require_rank(const Var& a, int r, const char* op) {
    if (a.value().rank() != r) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_to_string(a.shape()));
    }
}

void scalar_grad_check(const Node& self) {
    if (self.grad.numel() != 1) throw ShapeError("scalar op with non-scalar grad");
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0f);
    return grad;
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.defined() || root.value().numel() != 1) {
        throw ShapeError("backward() requires a scalar root");
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS restricted to nodes that require a gradient.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

double Var::item() const {
    const double s = node_->scalar;
    return std::isnan(s) ? static_cast<double>(node_->value.item()) : s;
}

namespace {

Var with_scalar(Var v, double s) {
    v.node()->scalar = s;
    return v;
}

}  // namespace

Var add(const Var& a, const Var& b) { return add_scaled(a, b, 1.0f); }
Var sub(const Var& a, const Var& b) { return add_scaled(a, b, -1.0f); }

Var add_scaled(const Var& a, const Var& b, float s) {
    check_same(a, b, "add");
    Tensor out = a.value();
    const float* bv = b.value().data();
    float* o = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) o[i] += s * bv[i];
    const double exact = n == 1 ? a.item() + static_cast<double>(s) * b.item() : std::nan("");
    return with_scalar(make_result(std::move(out), {a, b}, [s](Node& self) {
        const std::size_t n = self.grad.numel();
        const float* g = self.grad.data();
        if (wants(self, 0)) {
            float* ga = self.parents[0]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (wants(self, 1)) {
            float* gb = self.parents[1]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] += s * g[i];
        }
    }), exact);
}

Var mul(const Var& a, const Var& b) {
    check_same(a, b, "mul");
    Tensor out = a.value();
    const float* bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const std::size_t n = self.grad.numel();
        const float* g = self.grad.data();
        const float* av = self.parents[0]->value.data();
        const float* bv = self.parents[1]->value.data();
        if (wants(self, 0)) {
            float* ga = self.parents[0]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        }
        if (wants(self, 1)) {
            float* gb = self.parents[1]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, float s) {
    Tensor out = a.value();
    for (float& v : out.values()) v *= s;
    const double exact = out.numel() == 1 ? static_cast<double>(s) * a.item() : std::nan("");
    return with_scalar(make_result(std::move(out), {a}, [s](Node& self) {
        float* ga = self.parents[0]->grad_buffer().data();
        const float* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += s * g[i];
    }), exact);
}

Var silu(const Var& a) {
    Tensor out = a.value();
    for (float& v : out.values()) v = v / (1.0f + std::exp(-v));
    return make_result(std::move(out), {a}, [](Node& self) {
        const float* x = self.parents[0]->value.data();
        const float* g = self.grad.data();
        float* ga = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const float sig = 1.0f / (1.0f + std::exp(-x[i]));
            ga[i] += g[i] * sig * (1.0f + x[i] * (1.0f - sig));
        }
    });
}

namespace {

struct ConvGeom {
    int n, ci, h, w, co, k, stride, pad, ho, wo;
    int rows() const { return ci * k * k; }
    int hw_out() const { return ho * wo; }
    // Output columns [lo, hi) whose input column ow*stride - pad + kj is in range.
    void valid_cols(int kj, int& lo, int& hi) const {
        const int off = kj - pad;
        lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
        const int last = w - 1 - off;
        hi = last < 0 ? 0 : std::min(wo, last / stride + 1);
        if (hi < lo) hi = lo;
    }
};

// One sample: (ci*k*k) x (ho*wo) column matrix.
void im2col(const float* x, const ConvGeom& g, float* cols) {
    const int hw = g.hw_out();
    for (int c = 0; c < g.ci; ++c) {
        const float* src = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                float* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
                int lo = 0, hi = 0;
                g.valid_cols(kj, lo, hi);
                const int off = kj - g.pad;
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    float* drow = row + oh * g.wo;
                    if (ih < 0 || ih >= g.h) {
                        std::fill_n(drow, g.wo, 0.0f);
                        continue;
                    }
                    const float* srow = src + ih * g.w + off;
                    std::fill(drow, drow + lo, 0.0f);
                    if (g.stride == 1) {
                        std::copy(srow + lo, srow + hi, drow + lo);
                    } else {
                        for (int ow = lo; ow < hi; ++ow) drow[ow] = srow[ow * g.stride];
                    }
                    std::fill(drow + hi, drow + g.wo, 0.0f);
                }
            }
        }
    }
}

void col2im(const float* cols, const ConvGeom& g, float* dx) {
    const int hw = g.hw_out();
    for (int c = 0; c < g.ci; ++c) {
        float* dst = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                const float* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
                int lo = 0, hi = 0;
                g.valid_cols(kj, lo, hi);
                const int off = kj - g.pad;
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.h) continue;
                    float* drow = dst + ih * g.w + off;
                    const float* srow = row + oh * g.wo;
                    for (int ow = lo; ow < hi; ++ow) drow[ow * g.stride] += srow[ow];
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    ConvGeom g{};
    g.n = x.shape()[0];
    g.ci = x.shape()[1];
    g.h = x.shape()[2];
    g.w = x.shape()[3];
    g.co = w.shape()[0];
    g.k = w.shape()[2];
    g.stride = stride;
    g.pad = pad;
    if (w.shape()[1] != g.ci || w.shape()[3] != g.k) {
        throw ShapeError("conv2d: weight " + shape_to_string(w.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
    }
    if (b.defined() && (b.value().rank() != 1 || b.shape()[0] != g.co)) {
        throw ShapeError("conv2d: bias shape " + shape_to_string(b.shape()));
    }
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: empty output");

    const int K = g.rows();
    const int hw = g.hw_out();
    const std::size_t in_stride = static_cast<std::size_t>(g.ci) * g.h * g.w;
    const std::size_t col_stride = static_cast<std::size_t>(K) * hw;
    const std::size_t out_stride = static_cast<std::size_t>(g.co) * hw;
    // A 1x1 stride-1 unpadded conv reads its input directly.
    const bool pointwise = g.k == 1 && stride == 1 && pad == 0;
    std::shared_ptr<std::vector<float>> cols;
    if (!pointwise) {
        cols = std::make_shared<std::vector<float>>(col_stride * g.n);
        for (int bi = 0; bi < g.n; ++bi) im2col(x.value().data() + bi * in_stride, g, cols->data() + bi * col_stride);
    }

    Tensor out({g.n, g.co, g.ho, g.wo});
    const CMapMat W(w.value().data(), g.co, K);
    for (int bi = 0; bi < g.n; ++bi) {
        const float* cb = pointwise ? x.value().data() + bi * in_stride : cols->data() + bi * col_stride;
        MapMat Y(out.data() + bi * out_stride, g.co, hw);
        Y.noalias() = W * CMapMat(cb, K, hw);
        if (b.defined()) {
            for (int c = 0; c < g.co; ++c) Y.row(c).array() += b.value()[static_cast<std::size_t>(c)];
        }
    }

    std::vector<Var> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    const bool has_bias = b.defined();
    return make_result(std::move(out), inputs, [g, cols, has_bias, pointwise](Node& self) {
        const int K = g.rows();
        const int hw = g.hw_out();
        const std::size_t in_stride = static_cast<std::size_t>(g.ci) * g.h * g.w;
        const std::size_t col_stride = static_cast<std::size_t>(K) * hw;
        const std::size_t out_stride = static_cast<std::size_t>(g.co) * hw;
        const float* go = self.grad.data();
        const float* xv = self.parents[0]->value.data();
        if (wants(self, 1)) {
            MapMat dW(self.parents[1]->grad_buffer().data(), g.co, K);
            for (int bi = 0; bi < g.n; ++bi) {
                const float* cb = pointwise ? xv + bi * in_stride : cols->data() + bi * col_stride;
                dW.noalias() += CMapMat(go + bi * out_stride, g.co, hw) * CMapMat(cb, K, hw).transpose();
            }
        }
        if (has_bias && wants(self, 2)) {
            float* gb = self.parents[2]->grad_buffer().data();
            for (int c = 0; c < g.co; ++c) {
                double s = 0.0;
                for (int bi = 0; bi < g.n; ++bi) {
                    const float* row = go + bi * out_stride + static_cast<std::size_t>(c) * hw;
                    for (int p = 0; p < hw; ++p) s += row[p];
                }
                gb[c] += static_cast<float>(s);
            }
        }
        if (wants(self, 0)) {
            const CMapMat W(self.parents[1]->value.data(), g.co, K);
            float* dx = self.parents[0]->grad_buffer().data();
            std::vector<float> dcols(pointwise ? 0 : col_stride);
            for (int bi = 0; bi < g.n; ++bi) {
                const CMapMat dY(go + bi * out_stride, g.co, hw);
                if (pointwise) {
                    MapMat(dx + bi * in_stride, K, hw).noalias() += W.transpose() * dY;
                } else {
                    MapMat(dcols.data(), K, hw).noalias() = W.transpose() * dY;
                    col2im(dcols.data(), g, dx + bi * in_stride);
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    const int n = x.shape()[0];
    const int in = x.shape()[1];
    const int out_dim = w.shape()[0];
    if (w.shape()[1] != in) {
        throw ShapeError("linear: weight " + shape_to_string(w.shape()) + " vs input " +
                         shape_to_string(x.shape()));
    }
    Tensor out({n, out_dim});
    MapMat(out.data(), n, out_dim).noalias() =
        CMapMat(x.value().data(), n, in) * CMapMat(w.value().data(), out_dim, in).transpose();
    if (b.defined()) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) out[static_cast<std::size_t>(i) * out_dim + j] += b.value()[j];
    }
    std::vector<Var> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    const bool has_bias = b.defined();
    return make_result(std::move(out), inputs, [n, in, out_dim, has_bias](Node& self) {
        CMapMat g(self.grad.data(), n, out_dim);
        if (wants(self, 0)) {
            MapMat(self.parents[0]->grad_buffer().data(), n, in).noalias() +=
                g * CMapMat(self.parents[1]->value.data(), out_dim, in);
        }
        if (wants(self, 1)) {
            MapMat(self.parents[1]->grad_buffer().data(), out_dim, in).noalias() +=
                g.transpose() * CMapMat(self.parents[0]->value.data(), n, in);
        }
        if (has_bias && wants(self, 2)) {
            float* gb = self.parents[2]->grad_buffer().data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out_dim; ++j) gb[j] += self.grad[static_cast<std::size_t>(i) * out_dim + j];
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    const int n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
    }
    Tensor out({m, n});
    MapMat(out.data(), m, n).noalias() = CMapMat(a.value().data(), m, k) * CMapMat(b.value().data(), k, n);
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        CMapMat g(self.grad.data(), m, n);
        if (wants(self, 0)) {
            MapMat(self.parents[0]->grad_buffer().data(), m, k).noalias() +=
                g * CMapMat(self.parents[1]->value.data(), k, n).transpose();
        }
        if (wants(self, 1)) {
            MapMat(self.parents[1]->grad_buffer().data(), k, n).noalias() +=
                CMapMat(self.parents[0]->value.data(), m, k).transpose() * g;
        }
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& self) {
        float* ga = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += self.grad[i];
    });
}

Var film(const Var& h, const Var& ss) {
    require_rank(h, 4, "film features");
    require_rank(ss, 2, "film modulation");
    const int n = h.shape()[0];
    const int c = h.shape()[1];
    const int hw = h.shape()[2] * h.shape()[3];
    if (ss.shape()[0] != n || ss.shape()[1] != 2 * c) {
        throw ShapeError("film: modulation " + shape_to_string(ss.shape()) + " for features " +
                         shape_to_string(h.shape()));
    }
    Tensor out = h.value();
    const float* m = ss.value().data();
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const float sc = m[b * 2 * c + ch];
            const float sh = m[b * 2 * c + c + ch];
            float* p = out.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (int i = 0; i < hw; ++i) p[i] = p[i] * sc + sh;
        }
    }
    return make_result(std::move(out), {h, ss}, [n, c, hw](Node& self) {
        const float* g = self.grad.data();
        const float* x = self.parents[0]->value.data();
        const float* m = self.parents[1]->value.data();
        float* gx = wants(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* gm = wants(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                const float sc = m[b * 2 * c + ch];
                double dsc = 0.0, dsh = 0.0;
                for (int i = 0; i < hw; ++i) {
                    if (gx) gx[off + i] += g[off + i] * sc;
                    dsc += static_cast<double>(g[off + i]) * x[off + i];
                    dsh += g[off + i];
                }
                if (gm) {
                    gm[b * 2 * c + ch] += static_cast<float>(dsc);
                    gm[b * 2 * c + c + ch] += static_cast<float>(dsh);
                }
            }
        }
    });
}

Var broadcast_rows(const Var& v, int n) {
    require_rank(v, 1, "broadcast_rows");
    const int e = v.shape()[0];
    Tensor out({n, e});
    for (int i = 0; i < n; ++i) std::copy_n(v.value().data(), e, out.data() + static_cast<std::size_t>(i) * e);
    return make_result(std::move(out), {v}, [n, e](Node& self) {
        float* gv = self.parents[0]->grad_buffer().data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < e; ++j) gv[j] += self.grad[static_cast<std::size_t>(i) * e + j];
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 4, "upsample");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out({n, c, 2 * h, 2 * w});
    const float* src = x.value().data();
    for (int p = 0; p < n * c; ++p) {
        for (int i = 0; i < 2 * h; ++i) {
            for (int j = 0; j < 2 * w; ++j) {
                out[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j] =
                    src[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
            }
        }
    }
    return make_result(std::move(out), {x}, [n, c, h, w](Node& self) {
        float* gx = self.parents[0]->grad_buffer().data();
        const float* g = self.grad.data();
        for (int p = 0; p < n * c; ++p) {
            for (int i = 0; i < 2 * h; ++i) {
                for (int j = 0; j < 2 * w; ++j) {
                    gx[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
                        g[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j];
                }
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    require_rank(a, 4, "concat lhs");
    require_rank(b, 4, "concat rhs");
    const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    const int h = a.shape()[2], w = a.shape()[3];
    if (b.shape()[0] != n || b.shape()[2] != h || b.shape()[3] != w) {
        throw ShapeError("concat_channels: " + shape_to_string(a.shape()) + " with " +
                         shape_to_string(b.shape()));
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor out({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b.value().data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
    }
    return make_result(std::move(out), {a, b}, [n, ca, cb, hw](Node& self) {
        const float* g = self.grad.data();
        for (int i = 0; i < n; ++i) {
            if (wants(self, 0)) {
                float* ga = self.parents[0]->grad_buffer().data() + i * ca * hw;
                const float* src = g + i * (ca + cb) * hw;
                for (std::size_t k = 0; k < ca * hw; ++k) ga[k] += src[k];
            }
            if (wants(self, 1)) {
                float* gb = self.parents[1]->grad_buffer().data() + i * cb * hw;
                const float* src = g + (i * (ca + cb) + ca) * hw;
                for (std::size_t k = 0; k < cb * hw; ++k) gb[k] += src[k];
            }
        }
    });
}

Var per_sample_affine(const Var& a, std::span<const float> ca, const Var& b, std::span<const float> cb) {
    check_same(a, b, "per_sample_affine");
    const int n = a.shape().empty() ? 0 : a.shape()[0];
    if (static_cast<int>(ca.size()) != n || static_cast<int>(cb.size()) != n) {
        throw ShapeError("per_sample_affine: coefficient count does not match batch");
    }
    const std::size_t per = n ? a.value().numel() / static_cast<std::size_t>(n) : 0;
    Tensor out(a.shape());
    for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < per; ++k) {
            const std::size_t idx = i * per + k;
            out[idx] = ca[i] * a.value()[idx] + cb[i] * b.value()[idx];
        }
    }
    std::vector<float> cav(ca.begin(), ca.end()), cbv(cb.begin(), cb.end());
    return make_result(std::move(out), {a, b}, [n, per, cav, cbv](Node& self) {
        float* ga = wants(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* gb = wants(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        for (int i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < per; ++k) {
                const std::size_t idx = i * per + k;
                if (ga) ga[idx] += cav[i] * self.grad[idx];
                if (gb) gb[idx] += cbv[i] * self.grad[idx];
            }
        }
    });
}

int reflect_index(int i, int n) noexcept {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

namespace {

// One separable pass over every plane of one sample; `adjoint` scatters instead of gathers.
void blur_pass(const float* src, float* dst, int planes, int h, int w, const std::vector<float>& k,
               bool horizontal, bool adjoint) {
    const int r = static_cast<int>(k.size()) / 2;
    for (int p = 0; p < planes; ++p) {
        const float* s = src + static_cast<std::size_t>(p) * h * w;
        float* d = dst + static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                if (!adjoint) {
                    double acc = 0.0;
                    for (int t = -r; t <= r; ++t) {
                        const int ii = horizontal ? i : reflect_index(i + t, h);
                        const int jj = horizontal ? reflect_index(j + t, w) : j;
                        acc += static_cast<double>(k[static_cast<std::size_t>(t + r)]) * s[ii * w + jj];
                    }
                    d[i * w + j] = static_cast<float>(acc);
                } else {
                    const float g = s[i * w + j];
                    for (int t = -r; t <= r; ++t) {
                        const int ii = horizontal ? i : reflect_index(i + t, h);
                        const int jj = horizontal ? reflect_index(j + t, w) : j;
                        d[ii * w + jj] += k[static_cast<std::size_t>(t + r)] * g;
                    }
                }
            }
        }
    }
}

}  // namespace

Var blur_reflect(const Var& x, const std::vector<std::vector<float>>& kernels) {
    require_rank(x, 4, "blur_reflect");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (static_cast<int>(kernels.size()) != n) throw ShapeError("blur_reflect: one kernel per sample required");
    for (const auto& k : kernels) {
        if (k.size() % 2 == 0) throw ParameterError("blur_reflect: kernel length must be odd");
    }
    const std::size_t per = static_cast<std::size_t>(c) * h * w;
    Tensor out(x.shape());
    std::vector<float> tmp(per);
    for (int i = 0; i < n; ++i) {
        blur_pass(x.value().data() + i * per, tmp.data(), c, h, w, kernels[i], true, false);
        blur_pass(tmp.data(), out.data() + i * per, c, h, w, kernels[i], false, false);
    }
    return make_result(std::move(out), {x}, [n, c, h, w, per, kernels](Node& self) {
        std::vector<float> tmp(per);
        for (int i = 0; i < n; ++i) {
            std::fill(tmp.begin(), tmp.end(), 0.0f);
            blur_pass(self.grad.data() + i * per, tmp.data(), c, h, w, kernels[i], false, true);
            blur_pass(tmp.data(), self.parents[0]->grad_buffer().data() + i * per, c, h, w, kernels[i], true,
                      true);
        }
    });
}

Var mse(const Var& a, const Var& b) {
    check_same(a, b, "mse");
    const std::size_t n = a.value().numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.value()[i]) - b.value()[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    return with_scalar(make_result(std::move(out), {a, b}, [n](Node& self) {
        scalar_grad_check(self);
        const float k = 2.0f * self.grad[0] / static_cast<float>(n);
        const float* av = self.parents[0]->value.data();
        const float* bv = self.parents[1]->value.data();
        if (wants(self, 0)) {
            float* ga = self.parents[0]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += k * (av[i] - bv[i]);
        }
        if (wants(self, 1)) {
            float* gb = self.parents[1]->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] -= k * (av[i] - bv[i]);
        }
    }), s / static_cast<double>(n));
}

Var mean_abs_diff(const Var& a, const Var& b) {
    check_same(a, b, "mean_abs_diff");
    const std::size_t n = a.value().numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    return with_scalar(make_result(std::move(out), {a, b}, [n](Node& self) {
        scalar_grad_check(self);
        const float k = self.grad[0] / static_cast<float>(n);
        const float* av = self.parents[0]->value.data();
        const float* bv = self.parents[1]->value.data();
        float* ga = wants(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* gb = wants(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const float d = av[i] - bv[i];
            const float sg = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
            if (ga) ga[i] += k * sg;
            if (gb) gb[i] -= k * sg;
        }
    }), s / static_cast<double>(n));
}

Var mean_dot(const Var& x, const Tensor& g) {
    if (x.shape() != g.shape()) {
        throw ShapeError("mean_dot: " + shape_to_string(x.shape()) + " vs " + shape_to_string(g.shape()));
    }
    const std::size_t n = g.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x.value()[i]) * g[i];
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    return with_scalar(make_result(std::move(out), {x}, [g, n](Node& self) {
        scalar_grad_check(self);
        const float k = self.grad[0] / static_cast<float>(n);
        float* gx = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) gx[i] += k * g[i];
    }), s / static_cast<double>(n));
}

}  // namespace tadsr::ag
