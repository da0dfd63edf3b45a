#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "artenc/common.hpp"

namespace artenc {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor. The production dtype is float; the double
// instantiation exists for the finite-difference oracles in the tests.
template <typename T>
class BasicTensor {
public:
    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_shape();
    }

    BasicTensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_))
            throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& buffer() { return data_; }
    const std::vector<T>& buffer() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(Shape s) {
        if (shape_numel(s) != data_.size())
            throw ConfigError("reshape from " + shape_str(shape_) + " to " +
                              shape_str(s) + " changes element count");
        shape_ = std::move(s);
    }

    // View of sample `n` of a batched tensor [N, ...]; copies the slab.
    BasicTensor<T> sample(int n) const {
        Shape inner(shape_.begin() + 1, shape_.end());
        const std::size_t slab = shape_numel(inner);
        BasicTensor<T> out(inner);
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(slab) * n,
                  data_.begin() + static_cast<std::ptrdiff_t>(slab) * (n + 1),
                  out.data_.begin());
        return out;
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        BasicTensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    void check_shape() const {
        for (int e : shape_)
            if (e <= 0) throw ConfigError("non-positive extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
BasicTensor<T> batch_of(const std::vector<BasicTensor<T>>& samples) {
    if (samples.empty()) throw ConfigError("cannot batch zero samples");
    Shape s = samples[0].shape();
    for (const auto& t : samples)
        if (t.shape() != s) throw ConfigError("ragged shapes in batch");
    Shape out_shape;
    out_shape.push_back(static_cast<int>(samples.size()));
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    BasicTensor<T> out(out_shape);
    const std::size_t slab = samples[0].numel();
    for (std::size_t n = 0; n < samples.size(); ++n)
        std::copy(samples[n].data(), samples[n].data() + slab, out.data() + n * slab);
    return out;
}

}  // namespace artenc
