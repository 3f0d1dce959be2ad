#include "tadsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tadsr/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tadsr {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor payload of " + std::to_string(data_.size()) +
                         " elements does not fit shape " + shape_to_string(shape_));
    }
}

int Tensor::dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("axis out of range for shape " + shape_to_string(shape_));
    return shape_[static_cast<std::size_t>(i)];
}

float Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    return data_[0];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return m;
}

double mean_abs(const Tensor& a) {
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (float v : a.values()) s += std::abs(v);
    return s / static_cast<double>(a.numel());
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mean_abs_diff");
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
    return s / static_cast<double>(a.numel());
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    std::vector<int> shape = items.front().shape();
    shape.insert(shape.begin(), static_cast<int>(items.size()));
    Tensor out(shape);
    const std::size_t per = items.front().numel();
    for (std::size_t i = 0; i < items.size(); ++i) {
        require_same_shape(items[i], items.front(), "stack");
        std::copy_n(items[i].data(), per, out.data() + i * per);
    }
    return out;
}

Tensor unstack_at(const Tensor& batch, int index) {
    if (batch.rank() < 1 || index < 0 || index >= batch.dim(0)) {
        throw ShapeError("unstack_at index out of range for " + shape_to_string(batch.shape()));
    }
    std::vector<int> shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t per = shape_numel(shape);
    std::vector<float> v(batch.data() + per * static_cast<std::size_t>(index),
                         batch.data() + per * static_cast<std::size_t>(index + 1));
    return Tensor(std::move(shape), std::move(v));
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace tadsr
