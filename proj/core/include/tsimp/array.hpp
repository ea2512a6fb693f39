#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsimp {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major float32 array. Training math is float32; metric
// accumulation elsewhere uses double.
class Array {
public:
    Array() = default;
    explicit Array(std::vector<int> shape, float fill = 0.0f);
    static Array scalar(float v);
    static Array from(std::vector<int> shape, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int size() const { return static_cast<int>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    bool is_scalar() const { return size() == 1; }

    // 2D view: rank-1 arrays are treated as a single row.
    int rows() const { return rank() >= 2 ? shape_[0] : 1; }
    int cols() const { return rows() == 0 ? 0 : size() / rows(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](int i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int i) const { return data_[static_cast<size_t>(i)]; }
    float& at2(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
    float at2(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Array& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(float v);

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

void require_same_shape(const Array& a, const Array& b, const char* op);

}  // namespace tsimp
