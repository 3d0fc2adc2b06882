#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "omnicd/autograd.hpp"

namespace omnicd {

using NamedParams = std::vector<std::pair<std::string, Var>>;

struct Rng {
    std::mt19937_64 g;
    explicit Rng(std::uint64_t seed = 0) : g(seed) {}
    double normal(double mu = 0.0, double sd = 1.0) {
        return std::normal_distribution<double>(mu, sd)(g);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(g);
    }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }
};

/// Xavier-uniform tensor with fan_in/fan_out given explicitly.
Tensor xavier(Shape s, int fan_in, int fan_out, Rng& rng);

// [N,H*W? ] helpers between [C,H,W] grids and [H*W,C] token matrices
Var chw_to_tokens(const Var& x);                  // [C,H,W] -> [HW,C]
Var tokens_to_chw(const Var& t, int h, int w);    // [HW,C] -> [C,H,W]

/// Fixed 2-D sinusoidal positional embedding, [H*W, dim].
Tensor sincos_pos2d(int h, int w, int dim);

struct Linear {
    Var w, b;  // [in,out], [out]
    Linear() = default;
    Linear(int in, int out, Rng& rng);
    Var fwd(const Var& x) const;  // [N,in] -> [N,out]
    void params(NamedParams& out, const std::string& prefix) const;
};

struct LayerNorm {
    Var gamma, beta;
    double eps = 1e-5;
    LayerNorm() = default;
    explicit LayerNorm(int dim);
    Var fwd(const Var& x) const;      // rows [N,D]
    Var fwd_chw(const Var& x) const;  // channel-wise LN on [C,H,W]
    void params(NamedParams& out, const std::string& prefix) const;
};

struct Conv2d {
    Var w, b;  // [Cout,Cin,k,k]
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng);
    Var fwd(const Var& x) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

struct ConvT2x2 {
    Var w, b;  // [Cin,Cout,2,2]
    ConvT2x2() = default;
    ConvT2x2(int cin, int cout, Rng& rng);
    Var fwd(const Var& x) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

/// Multi-head attention with separate q/k/v/out projections. The internal
/// width may differ from the token width (halved channels in cross-attention).
struct MultiheadAttention {
    Linear q, k, v, o;
    int heads = 1;
    int inner = 0;
    MultiheadAttention() = default;
    MultiheadAttention(int dim_q, int dim_kv, int inner, int heads, Rng& rng);
    Var fwd(const Var& qx, const Var& kx, const Var& vx) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

/// Two-layer MLP with configurable activation.
struct Mlp {
    Linear fc1, fc2;
    bool use_gelu = true;
    Mlp() = default;
    Mlp(int dim, int hidden, int out, Rng& rng, bool use_gelu = true);
    Var fwd(const Var& x) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

}  // namespace omnicd
