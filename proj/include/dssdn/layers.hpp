#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dssdn/ops.hpp"
#include "dssdn/tensor.hpp"

namespace dssdn {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Grouped conv with learned weight/bias. Padding defaults keep spatial dims
// for 1x1 / 3x1 / 1x3 / 3x3 kernels at stride 1.
struct Conv2d {
    Tensor weight;  // (c_out, c_in/groups, kh, kw)
    Tensor bias;    // (c_out)
    ops::IntPair stride{1, 1};
    ops::IntPair padding{0, 0};
    int groups = 1;

    Conv2d() = default;
    Conv2d(int c_in, int c_out, int kh, int kw, ops::IntPair pad, int groups,
           std::mt19937_64& rng);

    Tensor forward(const Tensor& x) const {
        return ops::conv2d(x, weight, bias, stride, padding, groups);
    }
    int64_t param_count() const;
    // MACs for one forward at the given input spatial dims (batch excluded).
    int64_t macs(int in_h, int in_w) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Linear {
    Tensor weight;  // (out, in)
    Tensor bias;    // (out)

    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }
    int64_t param_count() const;
    int64_t macs() const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// beta = s_3x1(p_1x1(x)) + s_1x3(p_1x1(x)); the pointwise result is shared.
struct SCLayer {
    Conv2d p_1x1;  // c_in -> c_out
    Conv2d s_3x1;  // depthwise over c_out
    Conv2d s_1x3;  // depthwise over c_out

    SCLayer() = default;
    SCLayer(int c_in, int c_out, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    int64_t param_count() const;
    int64_t macs(int in_h, int in_w) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// beta = s_3x1(n(m(x))) + s_1x3(n(m(x))); n∘m shared, m carries the
// orthonormality penalty.
struct OSCLayer {
    Conv2d m_1x1;  // c_in -> mid
    Conv2d n_1x1;  // mid -> c_out
    Conv2d s_3x1;
    Conv2d s_1x3;
    double ortho_lambda = 1e-4;

    OSCLayer() = default;
    OSCLayer(int c_in, int c_out, int mid_channels, std::mt19937_64& rng);
    static int default_mid_channels(int c_in, int c_out);
    Tensor forward(const Tensor& x) const;
    Tensor penalty() const { return ops::ortho_penalty(m_1x1.weight); }
    int64_t param_count() const;
    int64_t macs(int in_h, int in_w) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// beta = p_1x1(sc(x[:c_dim]) ++ x[c_dim:]) — the untouched tail bypasses the
// inner SC and the final pointwise conv fuses everything.
struct SPCLayer {
    int c_dim = 0;
    SCLayer inner;  // c_dim -> c_dim
    Conv2d p_1x1;   // c_in -> c_out

    SPCLayer() = default;
    SPCLayer(int c_in, int c_out, double touched_fraction, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    int64_t param_count() const;
    int64_t macs(int in_h, int in_w) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Per-channel gate from a 1-D conv over pooled channel descriptors.
struct ECALayer {
    Tensor weight;  // (1, 1, 1, k)
    int k = 3;

    ECALayer() = default;
    ECALayer(int channels, std::mt19937_64& rng);
    ECALayer(int channels, int kernel_size, std::mt19937_64& rng);
    static int kernel_size_for(int channels);
    Tensor forward(const Tensor& x) const;
    int64_t param_count() const { return k; }
    int64_t macs(int channels) const { return static_cast<int64_t>(channels) * k; }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

}  // namespace dssdn
