#include "dssdn/layers.hpp"

#include <cmath>

namespace dssdn {

namespace {

Tensor init_weight(const Shape& shape, int fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / fan_in);
    return Tensor::uniform(shape, -bound, bound, rng, /*requires_grad=*/true);
}

}  // namespace

Conv2d::Conv2d(int c_in, int c_out, int kh, int kw, ops::IntPair pad, int groups,
               std::mt19937_64& rng)
    : padding(pad), groups(groups) {
    if (groups < 1 || c_in % groups != 0) {
        throw ConfigError("conv groups " + std::to_string(groups) + " must divide c_in " +
                          std::to_string(c_in));
    }
    const int fan_in = (c_in / groups) * kh * kw;
    weight = init_weight({c_out, c_in / groups, kh, kw}, fan_in, rng);
    bias = init_weight({c_out}, fan_in, rng);
}

int64_t Conv2d::param_count() const { return weight.size() + bias.size(); }

int64_t Conv2d::macs(int in_h, int in_w) const {
    const int kh = weight.dim(2), kw = weight.dim(3);
    const int oh = (in_h + 2 * padding.h - kh) / stride.h + 1;
    const int ow = (in_w + 2 * padding.w - kw) / stride.w + 1;
    return static_cast<int64_t>(oh) * ow * weight.dim(0) * weight.dim(1) * kh * kw;
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Linear::Linear(int in, int out, std::mt19937_64& rng) {
    weight = init_weight({out, in}, in, rng);
    bias = init_weight({out}, in, rng);
}

int64_t Linear::param_count() const { return weight.size() + bias.size(); }
int64_t Linear::macs() const { return static_cast<int64_t>(weight.dim(0)) * weight.dim(1); }

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

SCLayer::SCLayer(int c_in, int c_out, std::mt19937_64& rng)
    : p_1x1(c_in, c_out, 1, 1, {0, 0}, 1, rng),
      s_3x1(c_out, c_out, 3, 1, {1, 0}, c_out, rng),
      s_1x3(c_out, c_out, 1, 3, {0, 1}, c_out, rng) {}

Tensor SCLayer::forward(const Tensor& x) const {
    const Tensor p = p_1x1.forward(x);  // shared by both branches
    return ops::add(s_3x1.forward(p), s_1x3.forward(p));
}

int64_t SCLayer::param_count() const {
    return p_1x1.param_count() + s_3x1.param_count() + s_1x3.param_count();
}

int64_t SCLayer::macs(int in_h, int in_w) const {
    return p_1x1.macs(in_h, in_w) + s_3x1.macs(in_h, in_w) + s_1x3.macs(in_h, in_w);
}

void SCLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    p_1x1.collect(prefix + ".p_1x1", out);
    s_3x1.collect(prefix + ".s_3x1", out);
    s_1x3.collect(prefix + ".s_1x3", out);
}

int OSCLayer::default_mid_channels(int c_in, int c_out) {
    return std::max(1, std::min(c_in, c_out) / 4);
}

OSCLayer::OSCLayer(int c_in, int c_out, int mid_channels, std::mt19937_64& rng)
    : m_1x1(c_in, mid_channels, 1, 1, {0, 0}, 1, rng),
      n_1x1(mid_channels, c_out, 1, 1, {0, 0}, 1, rng),
      s_3x1(c_out, c_out, 3, 1, {1, 0}, c_out, rng),
      s_1x3(c_out, c_out, 1, 3, {0, 1}, c_out, rng) {
    if (mid_channels < 1) throw ConfigError("OSC mid_channels must be >= 1");
}

Tensor OSCLayer::forward(const Tensor& x) const {
    const Tensor p = n_1x1.forward(m_1x1.forward(x));  // shared
    return ops::add(s_3x1.forward(p), s_1x3.forward(p));
}

int64_t OSCLayer::param_count() const {
    return m_1x1.param_count() + n_1x1.param_count() + s_3x1.param_count() +
           s_1x3.param_count();
}

int64_t OSCLayer::macs(int in_h, int in_w) const {
    return m_1x1.macs(in_h, in_w) + n_1x1.macs(in_h, in_w) + s_3x1.macs(in_h, in_w) +
           s_1x3.macs(in_h, in_w);
}

void OSCLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    m_1x1.collect(prefix + ".m_1x1", out);
    n_1x1.collect(prefix + ".n_1x1", out);
    s_3x1.collect(prefix + ".s_3x1", out);
    s_1x3.collect(prefix + ".s_1x3", out);
}

SPCLayer::SPCLayer(int c_in, int c_out, double touched_fraction, std::mt19937_64& rng) {
    if (touched_fraction <= 0.0 || touched_fraction > 1.0) {
        throw ConfigError("SPC touched_fraction must be in (0, 1]");
    }
    c_dim = std::max(1, static_cast<int>(std::lround(touched_fraction * c_in)));
    if (c_dim > c_in) throw ConfigError("SPC c_dim exceeds c_in");
    inner = SCLayer(c_dim, c_dim, rng);
    p_1x1 = Conv2d(c_in, c_out, 1, 1, {0, 0}, 1, rng);
}

Tensor SPCLayer::forward(const Tensor& x) const {
    if (c_dim == x.dim(1)) {
        return p_1x1.forward(inner.forward(x));
    }
    auto [touched, untouched] = ops::split_channels(x, c_dim);
    return p_1x1.forward(ops::concat_channels(inner.forward(touched), untouched));
}

int64_t SPCLayer::param_count() const { return inner.param_count() + p_1x1.param_count(); }

int64_t SPCLayer::macs(int in_h, int in_w) const {
    return inner.macs(in_h, in_w) + p_1x1.macs(in_h, in_w);
}

void SPCLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    inner.collect(prefix + ".inner", out);
    p_1x1.collect(prefix + ".p_1x1", out);
}

int ECALayer::kernel_size_for(int channels) {
    // adaptive rule: nearest odd to log2(c)/2 + 1/2, floored at 3
    const double t = std::log2(static_cast<double>(channels)) / 2.0 + 0.5;
    int k = static_cast<int>(std::lround(t));
    if (k % 2 == 0) ++k;
    return std::max(k, 3);
}

ECALayer::ECALayer(int channels, std::mt19937_64& rng)
    : ECALayer(channels, kernel_size_for(channels), rng) {}

ECALayer::ECALayer(int channels, int kernel_size, std::mt19937_64& rng) : k(kernel_size) {
    (void)channels;
    if (k % 2 == 0) throw ConfigError("ECA kernel size must be odd, got " + std::to_string(k));
    weight = init_weight({1, 1, 1, k}, k, rng);
}

Tensor ECALayer::forward(const Tensor& x) const {
    const int b = x.dim(0), c = x.dim(1);
    Tensor d = ops::global_avg_pool(x);                        // (b, c)
    Tensor d4 = ops::reshape(d, {b, 1, 1, c});                 // conv over the channel axis
    Tensor a = ops::conv2d(d4, weight, Tensor(), {1, 1}, {0, (k - 1) / 2}, 1);
    a = ops::reshape(ops::sigmoid(a), {b, c});
    return ops::scale_channels(x, a);
}

void ECALayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
}

}  // namespace dssdn
