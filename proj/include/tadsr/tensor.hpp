#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tadsr {

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

/// Dense row-major float32 array. Single images are C x H x W, batches N x C x H x W.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor({}, std::vector<float>{v}); }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float item() const;
    void fill(float v);
    Tensor reshaped(std::vector<int> shape) const;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

/// Bitwise equality of shape and payload.
bool bit_equal(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);
double mean_abs(const Tensor& a);
double mean_abs_diff(const Tensor& a, const Tensor& b);

/// Stacks equally shaped tensors along a new leading batch axis.
Tensor stack(std::span<const Tensor> items);
/// Slice `index` of the leading axis.
Tensor unstack_at(const Tensor& batch, int index);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Keeps large tensor buffers on the heap instead of per-allocation mmap (glibc only; no-op elsewhere).
void tune_allocator();

}  // namespace tadsr
