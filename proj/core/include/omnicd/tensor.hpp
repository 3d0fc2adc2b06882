#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace omnicd {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense double tensor, row-major over an arbitrary shape.
struct Tensor {
    Shape shape;
    Eigen::ArrayXd data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);

    std::int64_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    double& operator[](std::int64_t i) { return data[i]; }
    double operator[](std::int64_t i) const { return data[i]; }

    // indexing helpers for the common layouts
    double& at2(int r, int c) { return data[static_cast<std::int64_t>(r) * dim(1) + c]; }
    double at2(int r, int c) const { return data[static_cast<std::int64_t>(r) * dim(1) + c]; }
    double& at3(int c, int y, int x) {
        return data[(static_cast<std::int64_t>(c) * dim(1) + y) * dim(2) + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<std::int64_t>(c) * dim(1) + y) * dim(2) + x];
    }

    bool all_finite() const { return data.isFinite().all(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace omnicd
