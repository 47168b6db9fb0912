#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace p2plab {

// Dense row-major float tensor, rank 1..4. Unused trailing dims are 1.
struct Tensor {
    std::array<int, 4> dims{1, 1, 1, 1};
    int rank = 0;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::initializer_list<int> shape) { reset(shape); }

    void reset(std::initializer_list<int> shape) {
        assert(shape.size() >= 1 && shape.size() <= 4);
        dims = {1, 1, 1, 1};
        rank = static_cast<int>(shape.size());
        int i = 0;
        int64_t n = 1;
        for (int d : shape) {
            assert(d > 0);
            dims[i++] = d;
            n *= d;
        }
        data.assign(static_cast<size_t>(n), 0.0f);
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return dims[static_cast<size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return rank == o.rank && dims == o.dims; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator()(int i) { return data[static_cast<size_t>(i)]; }
    float operator()(int i) const { return data[static_cast<size_t>(i)]; }
    float& operator()(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
    float operator()(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
    float& operator()(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }
    float operator()(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }
    float& operator()(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
    }
    float operator()(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
    }

    void zero() { std::fill(data.begin(), data.end(), 0.0f); }
    void fill(float v) { std::fill(data.begin(), data.end(), v); }
};

inline void add_inplace(Tensor& a, const Tensor& b) {
    assert(a.data.size() == b.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline void scale_inplace(Tensor& a, float s) {
    for (float& v : a.data) v *= s;
}

}  // namespace p2plab
