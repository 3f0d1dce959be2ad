#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "tadsr/tensor.hpp"

/// Reverse-mode differentiation over batched NCHW float tensors.
///
/// A Var is a handle to a graph node. Nodes that do not depend on any
/// trainable leaf carry no backward closure, so pure inference builds no
/// graph. backward() walks the graph reachable from a scalar root in reverse
/// topological order and accumulates into the grad buffer of every node that
/// requires a gradient.
namespace tadsr::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    /// Reductions also keep their result before rounding to float; NaN if unset.
    double scalar = std::numeric_limits<double>::quiet_NaN();

    /// Grad buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    /// Value of a one-element node, in double where the op kept it.
    double item() const;
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    /// Accumulated gradient; empty if backward never reached this node.
    const Tensor& grad() const { return node_->grad; }
    Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
/// a + s * b
Var add_scaled(const Var& a, const Var& b, float s);
Var silu(const Var& a);

/// 2-D convolution with zero padding. x: N x Ci x H x W, w: Co x Ci x k x k, b: Co or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// x: N x in, w: out x in, b: out or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
Var matmul(const Var& a, const Var& b);
Var reshape(const Var& a, std::vector<int> shape);

/// Feature-wise affine modulation: h * ss[:, :C] + ss[:, C:], ss is N x 2C.
Var film(const Var& h, const Var& ss);
/// v (length E) repeated into an n x E matrix.
Var broadcast_rows(const Var& v, int n);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);

/// out[n] = ca[n] * a[n] + cb[n] * b[n] with per-sample scalar coefficients.
Var per_sample_affine(const Var& a, std::span<const float> ca, const Var& b,
                      std::span<const float> cb);

/// Separable blur with reflect boundary. kernels[n] is the odd-length, 1-D
/// kernel applied along both axes of sample n.
Var blur_reflect(const Var& x, const std::vector<std::vector<float>>& kernels);

Var mse(const Var& a, const Var& b);
Var mean_abs_diff(const Var& a, const Var& b);
/// sum(g * x) / numel with g held constant.
Var mean_dot(const Var& x, const Tensor& g);

/// Reflect (no edge repeat) index into [0, n).
int reflect_index(int i, int n) noexcept;

}  // namespace tadsr::ag
