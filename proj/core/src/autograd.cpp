#include "omnicd/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "omnicd/errors.hpp"

namespace omnicd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void Node::add_grad(const Eigen::ArrayXd& dg) {
    if (!has_grad()) {
        g = Tensor::zeros(v.shape);
    }
    g.data += dg;
}

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->v = std::move(t);
    n->req = false;
    return n;
}

Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->v = std::move(t);
    n->req = true;
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->v = std::move(value);
    n->parents = std::move(parents);
    n->back = std::move(back);
    for (const auto& p : n->parents) {
        if (p->req) {
            n->req = true;
            break;
        }
    }
    return n;
}

void backward(const Var& root) {
    if (root->v.numel() != 1) throw NumericError("backward: root must be scalar");
    // iterative post-order topological sort over the req subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].get();
            ++idx;
            if (p->req && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->add_grad(Eigen::ArrayXd::Ones(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->back && n->has_grad()) n->back(*n);
    }
}

static void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->v.shape != b->v.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->v.shape) + " vs " +
                         shape_str(b->v.shape));
}

static bool is_scalar(const Var& a) { return a->v.numel() == 1; }

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    if (!is_scalar(b)) check_same_shape(a, b, "add");
    Tensor out(a->v.shape);
    if (is_scalar(b) && a->v.numel() != 1)
        out.data = a->v.data + b->v.data[0];
    else
        out.data = a->v.data + b->v.data;
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data);
        if (n.parents[1]->req) {
            if (n.parents[1]->v.numel() == 1 && n.v.numel() != 1)
                n.parents[1]->add_grad(Eigen::ArrayXd::Constant(1, n.g.data.sum()));
            else
                n.parents[1]->add_grad(n.g.data);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    if (!is_scalar(b)) check_same_shape(a, b, "sub");
    Tensor out(a->v.shape);
    if (is_scalar(b) && a->v.numel() != 1)
        out.data = a->v.data - b->v.data[0];
    else
        out.data = a->v.data - b->v.data;
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data);
        if (n.parents[1]->req) {
            if (n.parents[1]->v.numel() == 1 && n.v.numel() != 1)
                n.parents[1]->add_grad(Eigen::ArrayXd::Constant(1, -n.g.data.sum()));
            else
                n.parents[1]->add_grad(-n.g.data);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    if (!is_scalar(b)) check_same_shape(a, b, "mul");
    Tensor out(a->v.shape);
    if (is_scalar(b) && a->v.numel() != 1)
        out.data = a->v.data * b->v.data[0];
    else
        out.data = a->v.data * b->v.data;
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->v.data;
        const auto& bv = n.parents[1]->v.data;
        bool bs = n.parents[1]->v.numel() == 1 && n.v.numel() != 1;
        if (n.parents[0]->req) n.parents[0]->add_grad(bs ? (n.g.data * bv[0]).eval() : (n.g.data * bv).eval());
        if (n.parents[1]->req) {
            if (bs)
                n.parents[1]->add_grad(Eigen::ArrayXd::Constant(1, (n.g.data * av).sum()));
            else
                n.parents[1]->add_grad(n.g.data * av);
        }
    });
}

Var div_(const Var& a, const Var& b) {
    if (!is_scalar(b)) check_same_shape(a, b, "div");
    Tensor out(a->v.shape);
    if (is_scalar(b) && a->v.numel() != 1)
        out.data = a->v.data / b->v.data[0];
    else
        out.data = a->v.data / b->v.data;
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->v.data;
        const auto& bv = n.parents[1]->v.data;
        bool bs = n.parents[1]->v.numel() == 1 && n.v.numel() != 1;
        if (n.parents[0]->req) {
            if (bs)
                n.parents[0]->add_grad(n.g.data / bv[0]);
            else
                n.parents[0]->add_grad(n.g.data / bv);
        }
        if (n.parents[1]->req) {
            if (bs) {
                double d = -(n.g.data * av).sum() / (bv[0] * bv[0]);
                n.parents[1]->add_grad(Eigen::ArrayXd::Constant(1, d));
            } else {
                n.parents[1]->add_grad(-n.g.data * av / (bv * bv));
            }
        }
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    Tensor out(a->v.shape);
    out.data = a->v.data * s;
    return make_node(std::move(out), {a}, [s](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * s);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->v.shape);
    out.data = a->v.data + s;
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data);
    });
}

Var abs_(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.abs();
    return make_node(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->req) return;
        const auto& x = n.parents[0]->v.data;
        Eigen::ArrayXd sgn = (x > 0.0).cast<double>() - (x < 0.0).cast<double>();
        n.parents[0]->add_grad(n.g.data * sgn);
    });
}

Var relu(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.max(0.0);
    return make_node(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd m = (n.parents[0]->v.data > 0.0).cast<double>();
        n.parents[0]->add_grad(n.g.data * m);
    });
}

Var gelu(const Var& a) {
    Tensor out(a->v.shape);
    const double inv_sqrt2 = 0.7071067811865476;
    out.data = a->v.data.unaryExpr(
        [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    return make_node(std::move(out), {a}, [inv_sqrt2](Node& n) {
        if (!n.parents[0]->req) return;
        const auto& x = n.parents[0]->v.data;
        const double inv_sqrt2pi = 0.3989422804014327;
        Eigen::ArrayXd d = x.unaryExpr([inv_sqrt2, inv_sqrt2pi](double t) {
            return 0.5 * (1.0 + std::erf(t * inv_sqrt2)) +
                   t * inv_sqrt2pi * std::exp(-0.5 * t * t);
        });
        n.parents[0]->add_grad(n.g.data * d);
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a->v.shape);
    out.data = 1.0 / (1.0 + (-a->v.data).exp());
    Eigen::ArrayXd y = out.data;
    return make_node(std::move(out), {a}, [y](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * y * (1.0 - y));
    });
}

Var softplus(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.unaryExpr([](double x) {
        if (x > 30.0) return x;
        return std::log1p(std::exp(x));
    });
    return make_node(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd d = 1.0 / (1.0 + (-n.parents[0]->v.data).exp());
        n.parents[0]->add_grad(n.g.data * d);
    });
}

Var log_(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.log();
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data / n.parents[0]->v.data);
    });
}

Var sqrt_(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.sqrt();
    Eigen::ArrayXd y = out.data;
    return make_node(std::move(out), {a}, [y](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * 0.5 / y);
    });
}

Var square(const Var& a) {
    Tensor out(a->v.shape);
    out.data = a->v.data.square();
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * 2.0 * n.parents[0]->v.data);
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out(a->v.shape);
    out.data = a->v.data.max(lo).min(hi);
    return make_node(std::move(out), {a}, [lo, hi](Node& n) {
        if (!n.parents[0]->req) return;
        const auto& x = n.parents[0]->v.data;
        Eigen::ArrayXd m = ((x >= lo) && (x <= hi)).cast<double>();
        n.parents[0]->add_grad(n.g.data * m);
    });
}

Var max_elem(const Var& a, const Var& b) {
    check_same_shape(a, b, "max_elem");
    Tensor out(a->v.shape);
    out.data = a->v.data.max(b->v.data);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Eigen::ArrayXd take_a = (n.parents[0]->v.data >= n.parents[1]->v.data).cast<double>();
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * take_a);
        if (n.parents[1]->req) n.parents[1]->add_grad(n.g.data * (1.0 - take_a));
    });
}

Var mul_mask(const Var& a, const Tensor& mask) {
    Tensor out(a->v.shape);
    if (mask.shape == a->v.shape) {
        out.data = a->v.data * mask.data;
        Eigen::ArrayXd m = mask.data;
        return make_node(std::move(out), {a}, [m](Node& n) {
            if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data * m);
        });
    }
    // [H,W] mask broadcast across channels of [C,H,W]
    if (a->v.ndim() == 3 && mask.ndim() == 2 && mask.dim(0) == a->v.dim(1) &&
        mask.dim(1) == a->v.dim(2)) {
        int c = a->v.dim(0);
        std::int64_t hw = mask.numel();
        for (int i = 0; i < c; ++i)
            out.data.segment(i * hw, hw) = a->v.data.segment(i * hw, hw) * mask.data;
        Eigen::ArrayXd m = mask.data;
        return make_node(std::move(out), {a}, [m, c, hw](Node& n) {
            if (!n.parents[0]->req) return;
            Eigen::ArrayXd dg(n.g.data.size());
            for (int i = 0; i < c; ++i) dg.segment(i * hw, hw) = n.g.data.segment(i * hw, hw) * m;
            n.parents[0]->add_grad(dg);
        });
    }
    throw ShapeError("mul_mask: incompatible mask shape");
}

// ---- reductions ----

Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a->v.data.sum());
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->req)
            n.parents[0]->add_grad(
                Eigen::ArrayXd::Constant(n.parents[0]->v.data.size(), n.g.data[0]));
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->v.numel())); }

Var spatial_sum(const Var& a) {
    if (a->v.ndim() != 3) throw ShapeError("spatial_sum: expected [C,H,W]");
    int c = a->v.dim(0);
    std::int64_t hw = static_cast<std::int64_t>(a->v.dim(1)) * a->v.dim(2);
    Tensor out(Shape{c});
    for (int i = 0; i < c; ++i) out.data[i] = a->v.data.segment(i * hw, hw).sum();
    return make_node(std::move(out), {a}, [c, hw](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd dg(c * hw);
        for (int i = 0; i < c; ++i) dg.segment(i * hw, hw).setConstant(n.g.data[i]);
        n.parents[0]->add_grad(dg);
    });
}

Var spatial_mean(const Var& a) {
    double hw = static_cast<double>(a->v.dim(1)) * a->v.dim(2);
    return scale(spatial_sum(a), 1.0 / hw);
}

Var broadcast_chan(const Var& v, int h, int w) {
    if (v->v.ndim() != 1) throw ShapeError("broadcast_chan: expected [C]");
    int c = v->v.dim(0);
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor out(Shape{c, h, w});
    for (int i = 0; i < c; ++i) out.data.segment(i * hw, hw).setConstant(v->v.data[i]);
    return make_node(std::move(out), {v}, [c, hw](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd dg(c);
        for (int i = 0; i < c; ++i) dg[i] = n.g.data.segment(i * hw, hw).sum();
        n.parents[0]->add_grad(dg);
    });
}

// ---- linear algebra / shape ----

Var matmul(const Var& a, const Var& b) {
    if (a->v.ndim() != 2 || b->v.ndim() != 2 || a->v.dim(1) != b->v.dim(0))
        throw ShapeError("matmul: incompatible " + shape_str(a->v.shape) + " x " +
                         shape_str(b->v.shape));
    int m = a->v.dim(0), k = a->v.dim(1), n2 = b->v.dim(1);
    Tensor out(Shape{m, n2});
    CMapMat A(a->v.data.data(), m, k), B(b->v.data.data(), k, n2);
    MapMat(out.data.data(), m, n2) = A * B;
    return make_node(std::move(out), {a, b}, [m, k, n2](Node& n) {
        CMapMat G(n.g.data.data(), m, n2);
        if (n.parents[0]->req) {
            CMapMat B(n.parents[1]->v.data.data(), k, n2);
            Eigen::ArrayXd da(static_cast<std::int64_t>(m) * k);
            MapMat(da.data(), m, k) = G * B.transpose();
            n.parents[0]->add_grad(da);
        }
        if (n.parents[1]->req) {
            CMapMat A(n.parents[0]->v.data.data(), m, k);
            Eigen::ArrayXd db(static_cast<std::int64_t>(k) * n2);
            MapMat(db.data(), k, n2) = A.transpose() * G;
            n.parents[1]->add_grad(db);
        }
    });
}

Var transpose(const Var& a) {
    if (a->v.ndim() != 2) throw ShapeError("transpose: expected 2-D");
    int m = a->v.dim(0), k = a->v.dim(1);
    Tensor out(Shape{k, m});
    CMapMat A(a->v.data.data(), m, k);
    MapMat(out.data.data(), k, m) = A.transpose();
    return make_node(std::move(out), {a}, [m, k](Node& n) {
        if (!n.parents[0]->req) return;
        CMapMat G(n.g.data.data(), k, m);
        Eigen::ArrayXd da(static_cast<std::int64_t>(m) * k);
        MapMat(da.data(), m, k) = G.transpose();
        n.parents[0]->add_grad(da);
    });
}

Var reshape(const Var& a, Shape s) {
    if (shape_numel(s) != a->v.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(a->v.shape) + " -> " +
                         shape_str(s));
    Tensor out(std::move(s));
    out.data = a->v.data;
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data);
    });
}

Var slice_rows(const Var& a, int r0, int len) {
    int cols = a->v.dim(1);
    Tensor out(Shape{len, cols});
    out.data = a->v.data.segment(static_cast<std::int64_t>(r0) * cols,
                                 static_cast<std::int64_t>(len) * cols);
    return make_node(std::move(out), {a}, [r0, len, cols](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd dg = Eigen::ArrayXd::Zero(n.parents[0]->v.numel());
        dg.segment(static_cast<std::int64_t>(r0) * cols, static_cast<std::int64_t>(len) * cols) =
            n.g.data;
        n.parents[0]->add_grad(dg);
    });
}

Var slice_cols(const Var& a, int c0, int len) {
    int m = a->v.dim(0), k = a->v.dim(1);
    Tensor out(Shape{m, len});
    for (int r = 0; r < m; ++r)
        out.data.segment(static_cast<std::int64_t>(r) * len, len) =
            a->v.data.segment(static_cast<std::int64_t>(r) * k + c0, len);
    return make_node(std::move(out), {a}, [m, k, c0, len](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd dg = Eigen::ArrayXd::Zero(static_cast<std::int64_t>(m) * k);
        for (int r = 0; r < m; ++r)
            dg.segment(static_cast<std::int64_t>(r) * k + c0, len) =
                n.g.data.segment(static_cast<std::int64_t>(r) * len, len);
        n.parents[0]->add_grad(dg);
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    int cols = xs[0]->v.dim(1), rows = 0;
    for (const auto& x : xs) {
        if (x->v.dim(1) != cols) throw ShapeError("concat_rows: column mismatch");
        rows += x->v.dim(0);
    }
    Tensor out(Shape{rows, cols});
    std::int64_t off = 0;
    std::vector<std::int64_t> sizes;
    for (const auto& x : xs) {
        out.data.segment(off, x->v.numel()) = x->v.data;
        sizes.push_back(x->v.numel());
        off += x->v.numel();
    }
    return make_node(std::move(out), xs, [sizes](Node& n) {
        std::int64_t off = 0;
        for (size_t i = 0; i < n.parents.size(); ++i) {
            if (n.parents[i]->req) n.parents[i]->add_grad(n.g.data.segment(off, sizes[i]));
            off += sizes[i];
        }
    });
}

Var add_rowvec(const Var& a, const Var& v) {
    if (a->v.ndim() != 2 || v->v.numel() != a->v.dim(1))
        throw ShapeError("add_rowvec: incompatible shapes");
    int m = a->v.dim(0), d = a->v.dim(1);
    Tensor out(a->v.shape);
    for (int r = 0; r < m; ++r)
        out.data.segment(static_cast<std::int64_t>(r) * d, d) =
            a->v.data.segment(static_cast<std::int64_t>(r) * d, d) + v->v.data;
    return make_node(std::move(out), {a, v}, [m, d](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data);
        if (n.parents[1]->req) {
            Eigen::ArrayXd dv = Eigen::ArrayXd::Zero(d);
            for (int r = 0; r < m; ++r) dv += n.g.data.segment(static_cast<std::int64_t>(r) * d, d);
            n.parents[1]->add_grad(dv);
        }
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    int rows = xs[0]->v.dim(0), cols = 0;
    std::vector<int> widths;
    for (const auto& x : xs) {
        if (x->v.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
        widths.push_back(x->v.dim(1));
        cols += x->v.dim(1);
    }
    Tensor out(Shape{rows, cols});
    for (int r = 0; r < rows; ++r) {
        int c0 = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            out.data.segment(static_cast<std::int64_t>(r) * cols + c0, widths[i]) =
                xs[i]->v.data.segment(static_cast<std::int64_t>(r) * widths[i], widths[i]);
            c0 += widths[i];
        }
    }
    return make_node(std::move(out), xs, [rows, cols, widths](Node& n) {
        for (int r = 0; r < rows; ++r) {
            int c0 = 0;
            for (size_t i = 0; i < n.parents.size(); ++i) {
                if (n.parents[i]->req) {
                    if (!n.parents[i]->has_grad()) n.parents[i]->g = Tensor::zeros(n.parents[i]->v.shape);
                    n.parents[i]->g.data.segment(static_cast<std::int64_t>(r) * widths[i],
                                                 widths[i]) +=
                        n.g.data.segment(static_cast<std::int64_t>(r) * cols + c0, widths[i]);
                }
                c0 += widths[i];
            }
        }
    });
}

Var concat_chan(const Var& a, const Var& b) {
    if (a->v.ndim() != 3 || b->v.ndim() != 3 || a->v.dim(1) != b->v.dim(1) ||
        a->v.dim(2) != b->v.dim(2))
        throw ShapeError("concat_chan: spatial mismatch");
    Tensor out(Shape{a->v.dim(0) + b->v.dim(0), a->v.dim(1), a->v.dim(2)});
    out.data.head(a->v.numel()) = a->v.data;
    out.data.tail(b->v.numel()) = b->v.data;
    std::int64_t na = a->v.numel(), nb = b->v.numel();
    return make_node(std::move(out), {a, b}, [na, nb](Node& n) {
        if (n.parents[0]->req) n.parents[0]->add_grad(n.g.data.head(na));
        if (n.parents[1]->req) n.parents[1]->add_grad(n.g.data.tail(nb));
    });
}

// ---- row-wise nonlinear ----

Var softmax_rows(const Var& a) {
    int m = a->v.dim(0), k = a->v.dim(1);
    Tensor out(a->v.shape);
    for (int r = 0; r < m; ++r) {
        auto row = a->v.data.segment(static_cast<std::int64_t>(r) * k, k);
        double mx = row.maxCoeff();
        Eigen::ArrayXd e = (row - mx).exp();
        out.data.segment(static_cast<std::int64_t>(r) * k, k) = e / e.sum();
    }
    Eigen::ArrayXd y = out.data;
    return make_node(std::move(out), {a}, [m, k, y](Node& n) {
        if (!n.parents[0]->req) return;
        Eigen::ArrayXd dg(y.size());
        for (int r = 0; r < m; ++r) {
            auto yr = y.segment(static_cast<std::int64_t>(r) * k, k);
            auto gr = n.g.data.segment(static_cast<std::int64_t>(r) * k, k);
            double dot = (yr * gr).sum();
            dg.segment(static_cast<std::int64_t>(r) * k, k) = yr * (gr - dot);
        }
        n.parents[0]->add_grad(dg);
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    int m = x->v.dim(0), k = x->v.dim(1);
    if (gamma->v.numel() != k || beta->v.numel() != k)
        throw ShapeError("layer_norm_rows: parameter width mismatch");
    Tensor out(x->v.shape);
    Eigen::ArrayXd xhat(x->v.numel()), inv_std(m);
    for (int r = 0; r < m; ++r) {
        auto row = x->v.data.segment(static_cast<std::int64_t>(r) * k, k);
        double mu = row.mean();
        double var = (row - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        auto xh = ((row - mu) * is).eval();
        xhat.segment(static_cast<std::int64_t>(r) * k, k) = xh;
        out.data.segment(static_cast<std::int64_t>(r) * k, k) =
            xh * gamma->v.data + beta->v.data;
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [m, k, xhat, inv_std](Node& n) {
                         const auto& gamma = n.parents[1]->v.data;
                         Eigen::ArrayXd dgamma = Eigen::ArrayXd::Zero(k);
                         Eigen::ArrayXd dbeta = Eigen::ArrayXd::Zero(k);
                         Eigen::ArrayXd dx(xhat.size());
                         for (int r = 0; r < m; ++r) {
                             auto xh = xhat.segment(static_cast<std::int64_t>(r) * k, k);
                             auto gr = n.g.data.segment(static_cast<std::int64_t>(r) * k, k);
                             dgamma += gr * xh;
                             dbeta += gr;
                             Eigen::ArrayXd dxh = gr * gamma;
                             double mdxh = dxh.mean();
                             double mdxh_xh = (dxh * xh).mean();
                             dx.segment(static_cast<std::int64_t>(r) * k, k) =
                                 inv_std[r] * (dxh - mdxh - xh * mdxh_xh);
                         }
                         if (n.parents[0]->req) n.parents[0]->add_grad(dx);
                         if (n.parents[1]->req) n.parents[1]->add_grad(dgamma);
                         if (n.parents[2]->req) n.parents[2]->add_grad(dbeta);
                     });
}

// ---- conv / resampling ----

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->v.ndim() != 3 || w->v.ndim() != 4) throw ShapeError("conv2d: bad ranks");
    int cin = x->v.dim(0), h = x->v.dim(1), wd = x->v.dim(2);
    int cout = w->v.dim(0), kh = w->v.dim(2), kw = w->v.dim(3);
    if (w->v.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    std::int64_t patch = static_cast<std::int64_t>(cin) * kh * kw;
    std::int64_t cols = static_cast<std::int64_t>(oh) * ow;

    auto col = std::make_shared<RowMat>(patch, cols);
    col->setZero();
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                std::int64_t prow = (static_cast<std::int64_t>(ci) * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= wd) continue;
                        (*col)(prow, static_cast<std::int64_t>(oy) * ow + ox) =
                            x->v.at3(ci, iy, ix);
                    }
                }
            }
    Tensor out(Shape{cout, oh, ow});
    CMapMat W(w->v.data.data(), cout, patch);
    MapMat Y(out.data.data(), cout, cols);
    Y = W * (*col);
    for (int co = 0; co < cout; ++co) Y.row(co).array() += b->v.data[co];

    return make_node(
        std::move(out), {x, w, b},
        [col, cin, h, wd, cout, kh, kw, oh, ow, stride, pad, patch, cols](Node& n) {
            CMapMat G(n.g.data.data(), cout, cols);
            if (n.parents[1]->req) {
                Eigen::ArrayXd dw(cout * patch);
                MapMat(dw.data(), cout, patch) = G * col->transpose();
                n.parents[1]->add_grad(dw);
            }
            if (n.parents[2]->req) {
                Eigen::ArrayXd db(cout);
                for (int co = 0; co < cout; ++co) db[co] = G.row(co).sum();
                n.parents[2]->add_grad(db);
            }
            if (n.parents[0]->req) {
                CMapMat W(n.parents[1]->v.data.data(), cout, patch);
                RowMat dcol = W.transpose() * G;
                Tensor dx = Tensor::zeros(n.parents[0]->v.shape);
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            std::int64_t prow =
                                (static_cast<std::int64_t>(ci) * kh + ky) * kw + kx;
                            for (int oy = 0; oy < oh; ++oy) {
                                int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (int ox = 0; ox < ow; ++ox) {
                                    int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    dx.at3(ci, iy, ix) +=
                                        dcol(prow, static_cast<std::int64_t>(oy) * ow + ox);
                                }
                            }
                        }
                n.parents[0]->add_grad(dx.data);
            }
        });
}

Var conv_transpose2x2(const Var& x, const Var& w, const Var& b) {
    // w: [Cin, Cout, 2, 2]; output [Cout, 2H, 2W]
    if (x->v.ndim() != 3 || w->v.ndim() != 4 || w->v.dim(2) != 2 || w->v.dim(3) != 2)
        throw ShapeError("conv_transpose2x2: bad shapes");
    int cin = x->v.dim(0), h = x->v.dim(1), wd = x->v.dim(2);
    int cout = w->v.dim(1);
    if (w->v.dim(0) != cin) throw ShapeError("conv_transpose2x2: channel mismatch");
    std::int64_t hw = static_cast<std::int64_t>(h) * wd;
    CMapMat X(x->v.data.data(), cin, hw);
    CMapMat W(w->v.data.data(), cin, static_cast<std::int64_t>(cout) * 4);
    RowMat Y = W.transpose() * X;  // [Cout*4, HW]
    Tensor out(Shape{cout, 2 * h, 2 * wd});
    for (int co = 0; co < cout; ++co)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx2 = 0; dx2 < 2; ++dx2) {
                std::int64_t yrow = (static_cast<std::int64_t>(co) * 2 + dy) * 2 + dx2;
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < wd; ++ix)
                        out.at3(co, 2 * iy + dy, 2 * ix + dx2) =
                            Y(yrow, static_cast<std::int64_t>(iy) * wd + ix) + b->v.data[co];
            }
    return make_node(std::move(out), {x, w, b}, [cin, h, wd, cout, hw](Node& n) {
        // gather grad back into the [Cout*4, HW] layout
        RowMat Gm(static_cast<std::int64_t>(cout) * 4, hw);
        for (int co = 0; co < cout; ++co)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx2 = 0; dx2 < 2; ++dx2) {
                    std::int64_t yrow = (static_cast<std::int64_t>(co) * 2 + dy) * 2 + dx2;
                    for (int iy = 0; iy < h; ++iy)
                        for (int ix = 0; ix < wd; ++ix)
                            Gm(yrow, static_cast<std::int64_t>(iy) * wd + ix) =
                                n.g.at3(co, 2 * iy + dy, 2 * ix + dx2);
                }
        if (n.parents[2]->req) {
            Eigen::ArrayXd db = Eigen::ArrayXd::Zero(cout);
            for (int co = 0; co < cout; ++co)
                db[co] = Gm.middleRows(static_cast<std::int64_t>(co) * 4, 4).sum();
            n.parents[2]->add_grad(db);
        }
        if (n.parents[1]->req) {
            CMapMat X(n.parents[0]->v.data.data(), cin, hw);
            Eigen::ArrayXd dw(static_cast<std::int64_t>(cin) * cout * 4);
            MapMat(dw.data(), cin, static_cast<std::int64_t>(cout) * 4) = X * Gm.transpose();
            n.parents[1]->add_grad(dw);
        }
        if (n.parents[0]->req) {
            CMapMat W(n.parents[1]->v.data.data(), cin, static_cast<std::int64_t>(cout) * 4);
            Eigen::ArrayXd dx(static_cast<std::int64_t>(cin) * hw);
            MapMat(dx.data(), cin, hw) = W * Gm;
            n.parents[0]->add_grad(dx);
        }
    });
}

Var adaptive_avg_pool(const Var& x, int bin) {
    if (x->v.ndim() != 3) throw ShapeError("adaptive_avg_pool: expected [C,H,W]");
    int c = x->v.dim(0), h = x->v.dim(1), w = x->v.dim(2);
    if (bin > h || bin > w) throw DataError("adaptive_avg_pool: bin exceeds feature size");
    Tensor out(Shape{c, bin, bin});
    auto lo = [](int i, int n, int b) { return (i * n) / b; };
    auto hi = [](int i, int n, int b) { return ((i + 1) * n + b - 1) / b; };
    for (int ci = 0; ci < c; ++ci)
        for (int by = 0; by < bin; ++by)
            for (int bx = 0; bx < bin; ++bx) {
                int y0 = lo(by, h, bin), y1 = hi(by, h, bin);
                int x0 = lo(bx, w, bin), x1 = hi(bx, w, bin);
                double s = 0;
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx) s += x->v.at3(ci, y, xx);
                out.at3(ci, by, bx) = s / ((y1 - y0) * (x1 - x0));
            }
    return make_node(std::move(out), {x}, [c, h, w, bin, lo, hi](Node& n) {
        if (!n.parents[0]->req) return;
        Tensor dx = Tensor::zeros(n.parents[0]->v.shape);
        for (int ci = 0; ci < c; ++ci)
            for (int by = 0; by < bin; ++by)
                for (int bx = 0; bx < bin; ++bx) {
                    int y0 = lo(by, h, bin), y1 = hi(by, h, bin);
                    int x0 = lo(bx, w, bin), x1 = hi(bx, w, bin);
                    double gg = n.g.at3(ci, by, bx) / ((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx) dx.at3(ci, y, xx) += gg;
                }
        n.parents[0]->add_grad(dx.data);
    });
}

Var avg_pool2x2(const Var& x) {
    int c = x->v.dim(0), h = x->v.dim(1), w = x->v.dim(2);
    if (h % 2 || w % 2) throw ShapeError("avg_pool2x2: odd spatial size");
    Tensor out(Shape{c, h / 2, w / 2});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx)
                out.at3(ci, y, xx) = 0.25 * (x->v.at3(ci, 2 * y, 2 * xx) +
                                             x->v.at3(ci, 2 * y, 2 * xx + 1) +
                                             x->v.at3(ci, 2 * y + 1, 2 * xx) +
                                             x->v.at3(ci, 2 * y + 1, 2 * xx + 1));
    return make_node(std::move(out), {x}, [c, h, w](Node& n) {
        if (!n.parents[0]->req) return;
        Tensor dx(Shape{c, h, w});
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx) {
                    double gg = 0.25 * n.g.at3(ci, y, xx);
                    dx.at3(ci, 2 * y, 2 * xx) = gg;
                    dx.at3(ci, 2 * y, 2 * xx + 1) = gg;
                    dx.at3(ci, 2 * y + 1, 2 * xx) = gg;
                    dx.at3(ci, 2 * y + 1, 2 * xx + 1) = gg;
                }
        n.parents[0]->add_grad(dx.data);
    });
}

namespace {
struct Tap {
    int i0, i1;
    double w0, w1;
};
Tap tap_for(int o, int in, int out) {
    double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    int i0 = static_cast<int>(std::floor(src));
    int i1 = std::min(i0 + 1, in - 1);
    double f = src - i0;
    return {i0, i1, 1.0 - f, f};
}
}  // namespace

Var bilinear_resize(const Var& x, int oh, int ow) {
    int c = x->v.dim(0), h = x->v.dim(1), w = x->v.dim(2);
    std::vector<Tap> ty(oh), tx(ow);
    for (int y = 0; y < oh; ++y) ty[y] = tap_for(y, h, oh);
    for (int xx = 0; xx < ow; ++xx) tx[xx] = tap_for(xx, w, ow);
    Tensor out(Shape{c, oh, ow});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const Tap &a = ty[y], &b2 = tx[xx];
                out.at3(ci, y, xx) = a.w0 * (b2.w0 * x->v.at3(ci, a.i0, b2.i0) +
                                             b2.w1 * x->v.at3(ci, a.i0, b2.i1)) +
                                     a.w1 * (b2.w0 * x->v.at3(ci, a.i1, b2.i0) +
                                             b2.w1 * x->v.at3(ci, a.i1, b2.i1));
            }
    return make_node(std::move(out), {x}, [c, oh, ow, ty, tx](Node& n) {
        if (!n.parents[0]->req) return;
        Tensor dx = Tensor::zeros(n.parents[0]->v.shape);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const Tap &a = ty[y], &b2 = tx[xx];
                    double gg = n.g.at3(ci, y, xx);
                    dx.at3(ci, a.i0, b2.i0) += gg * a.w0 * b2.w0;
                    dx.at3(ci, a.i0, b2.i1) += gg * a.w0 * b2.w1;
                    dx.at3(ci, a.i1, b2.i0) += gg * a.w1 * b2.w0;
                    dx.at3(ci, a.i1, b2.i1) += gg * a.w1 * b2.w1;
                }
        n.parents[0]->add_grad(dx.data);
    });
}

Tensor bilinear_resize_tensor(const Tensor& x, int oh, int ow) {
    Var v = constant(x);
    return bilinear_resize(v, oh, ow)->v;
}

Var embed_rows(const Var& w, const std::vector<int>& ids) {
    int v2 = w->v.dim(0), d = w->v.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v2) throw DataError("embed_rows: id out of range");
    Tensor out(Shape{static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        out.data.segment(static_cast<std::int64_t>(i) * d, d) =
            w->v.data.segment(static_cast<std::int64_t>(ids[i]) * d, d);
    return make_node(std::move(out), {w}, [ids, d](Node& n) {
        if (!n.parents[0]->req) return;
        if (!n.parents[0]->has_grad()) n.parents[0]->g = Tensor::zeros(n.parents[0]->v.shape);
        for (size_t i = 0; i < ids.size(); ++i)
            n.parents[0]->g.data.segment(static_cast<std::int64_t>(ids[i]) * d, d) +=
                n.g.data.segment(static_cast<std::int64_t>(i) * d, d);
    });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training) {
    if (!training || p <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    Tensor mask(x->v.shape);
    double inv = 1.0 / (1.0 - p);
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask.data[i] = keep(rng) ? inv : 0.0;
    return mul_mask(x, mask);
}

}  // namespace omnicd
