#include "omnicd/tensor.hpp"

#include <sstream>

namespace omnicd {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

Tensor Tensor::zeros(Shape s) {
    Tensor t(std::move(s));
    t.data.setZero();
    return t;
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t(Shape{1});
    t.data[0] = v;
    return t;
}

}  // namespace omnicd
