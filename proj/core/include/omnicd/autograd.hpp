#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "omnicd/tensor.hpp"

namespace omnicd {

// Reverse-mode autodiff over Tensor. A Var is a shared node in the tape;
// backward() walks the graph once in reverse topological order.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor v;
    Tensor g;  // allocated lazily by add_grad
    bool req = false;
    std::vector<Var> parents;
    std::function<void(Node&)> back;

    void add_grad(const Eigen::ArrayXd& dg);
    bool has_grad() const { return g.data.size() == v.data.size(); }
    void zero_grad() { g = Tensor(); }
};

Var constant(Tensor t);
Var leaf(Tensor t);  // requires grad
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back);

/// Backprop from a scalar root (seeds grad with 1).
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div_(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs_(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var square(const Var& a);
Var clamp(const Var& a, double lo, double hi);  // zero gradient outside [lo,hi]
Var max_elem(const Var& a, const Var& b);       // ties route gradient to a
Var mul_mask(const Var& a, const Tensor& mask); // constant mask, same shape or [H,W] vs [C,H,W]

// ---- reductions / broadcast ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var spatial_sum(const Var& a);   // [C,H,W] -> [C]
Var spatial_mean(const Var& a);  // [C,H,W] -> [C]
Var broadcast_chan(const Var& v, int h, int w);  // [C] -> [C,H,W]

// ---- linear algebra / shape ----
Var matmul(const Var& a, const Var& b);  // [m,k]x[k,n]
Var transpose(const Var& a);             // [m,n] -> [n,m]
Var reshape(const Var& a, Shape s);
Var slice_rows(const Var& a, int r0, int len);
Var slice_cols(const Var& a, int c0, int len);
Var concat_rows(const std::vector<Var>& xs);
Var add_rowvec(const Var& a, const Var& v);  // [N,D] + [D] broadcast over rows
Var concat_cols(const std::vector<Var>& xs);
Var concat_chan(const Var& a, const Var& b);  // [Ca,H,W]+[Cb,H,W]

// ---- row-wise nonlinear ----
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- conv / resampling ([C,H,W]) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2x2(const Var& x, const Var& w, const Var& b);  // kernel 2, stride 2
Var adaptive_avg_pool(const Var& x, int bin);
Var avg_pool2x2(const Var& x);
Var bilinear_resize(const Var& x, int oh, int ow);

// ---- misc ----
Var embed_rows(const Var& w, const std::vector<int>& ids);  // [V,D] -> [L,D]
Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training);

/// Non-differentiable helper: bilinear resize of a raw tensor.
Tensor bilinear_resize_tensor(const Tensor& x, int oh, int ow);

}  // namespace omnicd
