#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "ded/rng.hpp"

namespace ded::nn {

// Dense row-major float32 tensor, rank <= 4, value semantics (copies own
// their storage). Reductions elsewhere accumulate in double.
class Tensor {
  public:
    Tensor() = default;
    Tensor(const Tensor& other) { *this = other; }
    Tensor& operator=(const Tensor& other) {
        if (this != &other) {
            shape_ = other.shape_;
            size_ = other.size_;
            data_ = std::make_unique<float[]>(static_cast<size_t>(size_));
            std::memcpy(data_.get(), other.data_.get(), sizeof(float) * static_cast<size_t>(size_));
        }
        return *this;
    }
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;

    static Tensor zeros(std::vector<int64_t> shape) {
        Tensor t = uninitialized(std::move(shape));
        t.zero();
        return t;
    }

    static Tensor uninitialized(std::vector<int64_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.size_ = 1;
        for (int64_t d : t.shape_) {
            t.size_ *= d;
        }
        t.data_ = std::make_unique_for_overwrite<float[]>(static_cast<size_t>(t.size_));
        return t;
    }

    static Tensor full(std::vector<int64_t> shape, float v) {
        Tensor t = uninitialized(std::move(shape));
        for (int64_t i = 0; i < t.size_; ++i) {
            t.data_[static_cast<size_t>(i)] = v;
        }
        return t;
    }

    static Tensor scalar(float v) { return full({1}, v); }

    static Tensor from(std::vector<int64_t> shape, const float* values) {
        Tensor t = uninitialized(std::move(shape));
        std::memcpy(t.data_.get(), values, sizeof(float) * static_cast<size_t>(t.size_));
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t size() const { return size_; }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    float* data() { return data_.get(); }
    const float* data() const { return data_.get(); }
    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void zero() { std::memset(data_.get(), 0, sizeof(float) * static_cast<size_t>(size_)); }

    bool all_finite() const {
        for (int64_t i = 0; i < size_; ++i) {
            if (!std::isfinite(data_[static_cast<size_t>(i)])) {
                return false;
            }
        }
        return true;
    }

  private:
    std::vector<int64_t> shape_;
    int64_t size_ = 0;
    std::unique_ptr<float[]> data_;
};

inline Tensor randn(std::vector<int64_t> shape, float stddev, Rng& rng) {
    Tensor t = Tensor::uninitialized(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) {
        t[i] = rng.next_gaussian() * stddev;
    }
    return t;
}

}  // namespace ded::nn
