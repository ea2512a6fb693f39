#include "tsimp/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace tsimp {

Array::Array(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
    size_t n = 1;
    for (int d : shape_) {
        if (d <= 0) throw Error("Array: non-positive dimension in shape " + shape_str());
        n *= static_cast<size_t>(d);
    }
    data_.assign(n, fill);
}

Array Array::scalar(float v) {
    Array a({1});
    a.data_[0] = v;
    return a;
}

Array Array::from(std::vector<int> shape, std::vector<float> data) {
    Array a(std::move(shape));
    if (a.data_.size() != data.size())
        throw Error("Array::from: data length " + std::to_string(data.size()) +
                    " does not match shape " + a.shape_str());
    a.data_ = std::move(data);
    return a;
}

bool Array::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Array::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

std::string Array::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

void require_same_shape(const Array& a, const Array& b, const char* op) {
    if (!a.same_shape(b))
        throw Error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace tsimp
