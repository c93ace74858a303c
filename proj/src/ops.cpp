#include "dssdn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dssdn::ops {

int64_t conv2d_call_count = 0;

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    node->requires_grad = rg;
    if (rg) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(node));
}

void accumulate(const std::shared_ptr<TensorNode>& n, size_t i, double v) {
    n->ensure_grad();
    n->grad[i] += v;
}

void check_rank4(const Tensor& x, const char* what) {
    if (x.rank() != 4) {
        throw DimensionError(std::string(what) + " must be rank 4, got " +
                             shape_str(x.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              IntPair stride, IntPair padding, int groups) {
    ++conv2d_call_count;
    check_rank4(input, "conv2d input");
    check_rank4(weight, "conv2d weight");
    const int b = input.dim(0), c_in = input.dim(1), ih = input.dim(2), iw = input.dim(3);
    const int c_out = weight.dim(0), wc = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
        throw ConfigError("conv2d groups " + std::to_string(groups) +
                          " must divide c_in=" + std::to_string(c_in) +
                          " and c_out=" + std::to_string(c_out));
    }
    if (wc != c_in / groups) {
        throw DimensionError("conv2d weight channel axis: expected " +
                             std::to_string(c_in / groups) + ", got " + std::to_string(wc));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
        throw DimensionError("conv2d bias axis 0: expected (" + std::to_string(c_out) +
                             "), got " + shape_str(bias.shape()));
    }
    if (stride.h < 1 || stride.w < 1) throw ConfigError("conv2d stride must be >= 1");
    const int oh = (ih + 2 * padding.h - kh) / stride.h + 1;
    const int ow = (iw + 2 * padding.w - kw) / stride.w + 1;
    if (kh > ih + 2 * padding.h || kw > iw + 2 * padding.w || oh < 1 || ow < 1) {
        throw DimensionError("conv2d kernel " + shape_str({kh, kw}) +
                             " does not fit padded input spatial axes " +
                             shape_str({ih + 2 * padding.h, iw + 2 * padding.w}));
    }

    const int cg_in = c_in / groups, cg_out = c_out / groups;
    const auto& xd = input.data();
    const auto& wd = weight.data();
    std::vector<double> out(static_cast<size_t>(b) * c_out * oh * ow, 0.0);

    for (int n = 0; n < b; ++n) {
        for (int g = 0; g < groups; ++g) {
            for (int oc = g * cg_out; oc < (g + 1) * cg_out; ++oc) {
                const double bv = bias.defined() ? bias.data()[static_cast<size_t>(oc)] : 0.0;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double acc = bv;
                        for (int ic = 0; ic < cg_in; ++ic) {
                            const int c = g * cg_in + ic;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int y = oy * stride.h - padding.h + ky;
                                if (y < 0 || y >= ih) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int x = ox * stride.w - padding.w + kx;
                                    if (x < 0 || x >= iw) continue;
                                    acc += xd[((static_cast<size_t>(n) * c_in + c) * ih + y) * iw + x] *
                                           wd[((static_cast<size_t>(oc) * cg_in + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((static_cast<size_t>(n) * c_out + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
    }

    std::vector<std::shared_ptr<TensorNode>> parents{input.node(), weight.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto in_node = input.node();
    auto w_node = weight.node();
    auto b_node = bias.defined() ? bias.node() : nullptr;
    auto backward = [=](TensorNode& self) {
        const auto& g = self.grad;
        const bool need_in = in_node->requires_grad;
        const bool need_w = w_node->requires_grad;
        const bool need_b = b_node && b_node->requires_grad;
        if (need_in) in_node->ensure_grad();
        if (need_w) w_node->ensure_grad();
        if (need_b) b_node->ensure_grad();
        for (int n = 0; n < b; ++n) {
            for (int gi = 0; gi < groups; ++gi) {
                for (int oc = gi * cg_out; oc < (gi + 1) * cg_out; ++oc) {
                    for (int oy = 0; oy < oh; ++oy) {
                        for (int ox = 0; ox < ow; ++ox) {
                            const double go =
                                g[((static_cast<size_t>(n) * c_out + oc) * oh + oy) * ow + ox];
                            if (go == 0.0) continue;
                            if (need_b) b_node->grad[static_cast<size_t>(oc)] += go;
                            for (int ic = 0; ic < cg_in; ++ic) {
                                const int c = gi * cg_in + ic;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int y = oy * stride.h - padding.h + ky;
                                    if (y < 0 || y >= ih) continue;
                                    for (int kx = 0; kx < kw; ++kx) {
                                        const int x = ox * stride.w - padding.w + kx;
                                        if (x < 0 || x >= iw) continue;
                                        const size_t xi =
                                            ((static_cast<size_t>(n) * c_in + c) * ih + y) * iw + x;
                                        const size_t wi =
                                            ((static_cast<size_t>(oc) * cg_in + ic) * kh + ky) * kw + kx;
                                        if (need_in) in_node->grad[xi] += go * w_node->data[wi];
                                        if (need_w) w_node->grad[wi] += go * in_node->data[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return make_result({b, c_out, oh, ow}, std::move(out), std::move(parents), backward);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (an->requires_grad) accumulate(an, i, self.grad[i]);
            if (bn->requires_grad) accumulate(bn, i, self.grad[i]);
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (an->requires_grad) accumulate(an, i, self.grad[i] * bn->data[i]);
            if (bn->requires_grad) accumulate(bn, i, self.grad[i] * an->data[i]);
        }
    });
}

Tensor mul_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.data());
    for (double& v : out) v *= s;
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn, s](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) accumulate(xn, i, self.grad[i] * s);
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto xn = x.node();
    return make_result({1}, {acc}, {xn}, [xn](TensorNode& self) {
        const double g = self.grad[0];
        for (size_t i = 0; i < xn->data.size(); ++i) accumulate(xn, i, g);
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data());
    for (double& v : out) v = std::max(v, 0.0);
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (xn->data[i] > 0.0) accumulate(xn, i, self.grad[i]);
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data());
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.data[i];
            accumulate(xn, i, self.grad[i] * y * (1.0 - y));
        }
    });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.rank() != b.rank()) {
        throw DimensionError("concat rank mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    if (axis < 0 || axis >= a.rank()) throw UsageError("concat axis out of range");
    for (int i = 0; i < a.rank(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i)) {
            throw DimensionError("concat: axis " + std::to_string(i) + " differs, " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] += b.dim(axis);

    // outer * (axis length) * inner indexing
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const int64_t la = a.dim(axis), lb = b.dim(axis);

    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + (o * (la + lb)) * inner, ad.data() + o * la * inner,
                    static_cast<size_t>(la * inner) * sizeof(double));
        std::memcpy(out.data() + (o * (la + lb) + la) * inner, bd.data() + o * lb * inner,
                    static_cast<size_t>(lb * inner) * sizeof(double));
    }
    auto an = a.node(), bn = b.node();
    return make_result(out_shape, std::move(out), {an, bn},
                       [an, bn, outer, inner, la, lb](TensorNode& self) {
                           for (int64_t o = 0; o < outer; ++o) {
                               for (int64_t j = 0; j < la * inner; ++j) {
                                   if (an->requires_grad)
                                       accumulate(an, static_cast<size_t>(o * la * inner + j),
                                                  self.grad[static_cast<size_t>(
                                                      (o * (la + lb)) * inner + j)]);
                               }
                               for (int64_t j = 0; j < lb * inner; ++j) {
                                   if (bn->requires_grad)
                                       accumulate(bn, static_cast<size_t>(o * lb * inner + j),
                                                  self.grad[static_cast<size_t>(
                                                      (o * (la + lb) + la) * inner + j)]);
                               }
                           }
                       });
}

std::pair<Tensor, Tensor> split(const Tensor& x, int axis, int point) {
    if (axis < 0 || axis >= x.rank()) throw UsageError("split axis out of range");
    const int len = x.dim(axis);
    if (point <= 0 || point >= len) {
        throw DimensionError("split point " + std::to_string(point) +
                             " must be strictly inside axis of length " + std::to_string(len));
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Shape sa = x.shape(), sb = x.shape();
    sa[static_cast<size_t>(axis)] = point;
    sb[static_cast<size_t>(axis)] = len - point;
    const int64_t la = point, lb = len - point;

    std::vector<double> da(static_cast<size_t>(outer * la * inner));
    std::vector<double> db(static_cast<size_t>(outer * lb * inner));
    const auto& xd = x.data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(da.data() + o * la * inner, xd.data() + (o * len) * inner,
                    static_cast<size_t>(la * inner) * sizeof(double));
        std::memcpy(db.data() + o * lb * inner, xd.data() + (o * len + la) * inner,
                    static_cast<size_t>(lb * inner) * sizeof(double));
    }
    auto xn = x.node();
    auto back_a = [xn, outer, inner, la, len = static_cast<int64_t>(len)](TensorNode& self) {
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < la * inner; ++j)
                accumulate(xn, static_cast<size_t>((o * len) * inner + j),
                           self.grad[static_cast<size_t>(o * la * inner + j)]);
    };
    auto back_b = [xn, outer, inner, la, lb, len = static_cast<int64_t>(len)](TensorNode& self) {
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < lb * inner; ++j)
                accumulate(xn, static_cast<size_t>((o * len + la) * inner + j),
                           self.grad[static_cast<size_t>(o * lb * inner + j)]);
    };
    return {make_result(sa, std::move(da), {xn}, back_a),
            make_result(sb, std::move(db), {xn}, back_b)};
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    }
    auto xn = x.node();
    return make_result(shape, x.data(), {xn}, [xn](TensorNode& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) accumulate(xn, i, self.grad[i]);
    });
}

Tensor global_avg_pool(const Tensor& x) {
    check_rank4(x, "global_avg_pool input");
    const int b = x.dim(0), c = x.dim(1);
    const int64_t spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<size_t>(b) * c, 0.0);
    const auto& xd = x.data();
    for (int64_t i = 0; i < static_cast<int64_t>(b) * c; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < spatial; ++j) acc += xd[static_cast<size_t>(i * spatial + j)];
        out[static_cast<size_t>(i)] = acc / static_cast<double>(spatial);
    }
    auto xn = x.node();
    return make_result({b, c}, std::move(out), {xn}, [xn, spatial](TensorNode& self) {
        const double inv = 1.0 / static_cast<double>(spatial);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double g = self.grad[i] * inv;
            for (int64_t j = 0; j < spatial; ++j)
                accumulate(xn, static_cast<size_t>(i * spatial + j), g);
        }
    });
}

Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w) {
    check_rank4(x, "adaptive_avg_pool input");
    const int b = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
    if (out_h < 1 || out_w < 1 || out_h > ih || out_w > iw) {
        throw ConfigError("adaptive_avg_pool target " + shape_str({out_h, out_w}) +
                          " invalid for input " + shape_str(x.shape()));
    }
    auto bin_lo = [](int o, int in, int out) { return (o * in) / out; };
    auto bin_hi = [](int o, int in, int out) { return ((o + 1) * in + out - 1) / out; };
    std::vector<double> out(static_cast<size_t>(b) * c * out_h * out_w, 0.0);
    const auto& xd = x.data();
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    const int y0 = bin_lo(oy, ih, out_h), y1 = bin_hi(oy, ih, out_h);
                    const int x0 = bin_lo(ox, iw, out_w), x1 = bin_hi(ox, iw, out_w);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx)
                            acc += xd[((static_cast<size_t>(n) * c + ch) * ih + y) * iw + xx];
                    out[((static_cast<size_t>(n) * c + ch) * out_h + oy) * out_w + ox] =
                        acc / ((y1 - y0) * (x1 - x0));
                }
    auto xn = x.node();
    return make_result({b, c, out_h, out_w}, std::move(out), {xn},
                       [xn, b, c, ih, iw, out_h, out_w, bin_lo, bin_hi](TensorNode& self) {
                           for (int n = 0; n < b; ++n)
                               for (int ch = 0; ch < c; ++ch)
                                   for (int oy = 0; oy < out_h; ++oy)
                                       for (int ox = 0; ox < out_w; ++ox) {
                                           const int y0 = bin_lo(oy, ih, out_h),
                                                     y1 = bin_hi(oy, ih, out_h);
                                           const int x0 = bin_lo(ox, iw, out_w),
                                                     x1 = bin_hi(ox, iw, out_w);
                                           const double g =
                                               self.grad[((static_cast<size_t>(n) * c + ch) *
                                                              out_h + oy) * out_w + ox] /
                                               ((y1 - y0) * (x1 - x0));
                                           for (int y = y0; y < y1; ++y)
                                               for (int xx = x0; xx < x1; ++xx)
                                                   accumulate(xn,
                                                              ((static_cast<size_t>(n) * c + ch) *
                                                                   ih + y) * iw + xx,
                                                              g);
                                       }
                       });
}

Tensor avg_pool_2x2(const Tensor& x) {
    check_rank4(x, "avg_pool_2x2 input");
    const int ih = x.dim(2), iw = x.dim(3);
    const int oh = std::max(1, ih / 2), ow = std::max(1, iw / 2);
    if (ih < 2 && iw < 2) return x;
    const int b = x.dim(0), c = x.dim(1);
    const int wh = ih >= 2 ? 2 : 1, ww = iw >= 2 ? 2 : 1;
    std::vector<double> out(static_cast<size_t>(b) * c * oh * ow, 0.0);
    const auto& xd = x.data();
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int dy = 0; dy < wh; ++dy)
                        for (int dx = 0; dx < ww; ++dx)
                            acc += xd[((static_cast<size_t>(n) * c + ch) * ih + oy * wh + dy) * iw +
                                      ox * ww + dx];
                    out[((static_cast<size_t>(n) * c + ch) * oh + oy) * ow + ox] = acc / (wh * ww);
                }
    auto xn = x.node();
    return make_result({b, c, oh, ow}, std::move(out), {xn},
                       [xn, b, c, ih, iw, oh, ow, wh, ww](TensorNode& self) {
                           for (int n = 0; n < b; ++n)
                               for (int ch = 0; ch < c; ++ch)
                                   for (int oy = 0; oy < oh; ++oy)
                                       for (int ox = 0; ox < ow; ++ox) {
                                           const double g =
                                               self.grad[((static_cast<size_t>(n) * c + ch) * oh +
                                                          oy) * ow + ox] / (wh * ww);
                                           for (int dy = 0; dy < wh; ++dy)
                                               for (int dx = 0; dx < ww; ++dx)
                                                   accumulate(xn,
                                                              ((static_cast<size_t>(n) * c + ch) *
                                                                   ih + oy * wh + dy) * iw +
                                                                  ox * ww + dx,
                                                              g);
                                       }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2) {
        throw DimensionError("linear expects rank-2 input and weight");
    }
    const int b = x.dim(0), in = x.dim(1), out_n = weight.dim(0);
    if (weight.dim(1) != in) {
        throw DimensionError("linear weight axis 1: expected " + std::to_string(in) + ", got " +
                             std::to_string(weight.dim(1)));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_n)) {
        throw DimensionError("linear bias shape mismatch");
    }
    std::vector<double> out(static_cast<size_t>(b) * out_n, 0.0);
    const auto& xd = x.data();
    const auto& wd = weight.data();
    for (int n = 0; n < b; ++n)
        for (int o = 0; o < out_n; ++o) {
            double acc = bias.defined() ? bias.data()[static_cast<size_t>(o)] : 0.0;
            for (int i = 0; i < in; ++i)
                acc += xd[static_cast<size_t>(n) * in + i] * wd[static_cast<size_t>(o) * in + i];
            out[static_cast<size_t>(n) * out_n + o] = acc;
        }
    std::vector<std::shared_ptr<TensorNode>> parents{x.node(), weight.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_result({b, out_n}, std::move(out), std::move(parents),
                       [xn, wn, bn, b, in, out_n](TensorNode& self) {
                           if (xn->requires_grad) xn->ensure_grad();
                           if (wn->requires_grad) wn->ensure_grad();
                           if (bn && bn->requires_grad) bn->ensure_grad();
                           for (int n = 0; n < b; ++n)
                               for (int o = 0; o < out_n; ++o) {
                                   const double g = self.grad[static_cast<size_t>(n) * out_n + o];
                                   if (g == 0.0) continue;
                                   if (bn && bn->requires_grad)
                                       accumulate(bn, static_cast<size_t>(o), g);
                                   for (int i = 0; i < in; ++i) {
                                       if (xn->requires_grad)
                                           accumulate(xn, static_cast<size_t>(n) * in + i,
                                                      g * wn->data[static_cast<size_t>(o) * in + i]);
                                       if (wn->requires_grad)
                                           accumulate(wn, static_cast<size_t>(o) * in + i,
                                                      g * xn->data[static_cast<size_t>(n) * in + i]);
                                   }
                               }
                       });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
    if (logits.rank() != 2 || targets.shape() != logits.shape()) {
        throw DimensionError("softmax_cross_entropy expects matching (batch, classes) inputs");
    }
    const int b = logits.dim(0), k = logits.dim(1);
    const auto& ld = logits.data();
    const auto& td = targets.data();
    std::vector<double> softmax(static_cast<size_t>(b) * k);
    double loss = 0.0;
    for (int n = 0; n < b; ++n) {
        double tsum = 0.0;
        for (int j = 0; j < k; ++j) tsum += td[static_cast<size_t>(n) * k + j];
        if (std::abs(tsum - 1.0) > 1e-5) {
            throw ValidationError("target row " + std::to_string(n) + " sums to " +
                                  std::to_string(tsum) + ", expected 1");
        }
        double m = ld[static_cast<size_t>(n) * k];
        for (int j = 1; j < k; ++j) m = std::max(m, ld[static_cast<size_t>(n) * k + j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(ld[static_cast<size_t>(n) * k + j] - m);
        const double logz = std::log(z) + m;
        for (int j = 0; j < k; ++j) {
            const size_t i = static_cast<size_t>(n) * k + j;
            const double logp = ld[i] - logz;
            softmax[i] = std::exp(logp);
            loss -= td[i] * logp;
        }
    }
    loss /= b;
    auto ln = logits.node();
    auto tn = targets.node();
    return make_result({1}, {loss}, {ln, tn},
                       [ln, tn, b, k, sm = std::move(softmax)](TensorNode& self) {
                           const double g = self.grad[0] / b;
                           for (size_t i = 0; i < sm.size(); ++i) {
                               if (ln->requires_grad)
                                   accumulate(ln, i, g * (sm[i] - tn->data[i]));
                           }
                       });
}

Tensor ortho_penalty(const Tensor& weight) {
    // Accept (rows, cols) or a pointwise conv weight (rows, cols, 1, 1).
    int rows, cols;
    if (weight.rank() == 2) {
        rows = weight.dim(0);
        cols = weight.dim(1);
    } else if (weight.rank() == 4 && weight.dim(2) == 1 && weight.dim(3) == 1) {
        rows = weight.dim(0);
        cols = weight.dim(1);
    } else {
        throw DimensionError("ortho_penalty expects a matrix-like weight, got " +
                             shape_str(weight.shape()));
    }
    const auto& wd = weight.data();
    // gram = W W^T - I
    std::vector<double> gram(static_cast<size_t>(rows) * rows, 0.0);
    double penalty = 0.0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < rows; ++j) {
            double acc = 0.0;
            for (int c = 0; c < cols; ++c)
                acc += wd[static_cast<size_t>(i) * cols + c] * wd[static_cast<size_t>(j) * cols + c];
            if (i == j) acc -= 1.0;
            gram[static_cast<size_t>(i) * rows + j] = acc;
            penalty += acc * acc;
        }
    auto wn = weight.node();
    return make_result({1}, {penalty}, {wn},
                       [wn, rows, cols, gm = std::move(gram)](TensorNode& self) {
                           // d/dW ||WW^T - I||_F^2 = 4 (WW^T - I) W
                           const double g = self.grad[0];
                           wn->ensure_grad();
                           for (int i = 0; i < rows; ++i)
                               for (int c = 0; c < cols; ++c) {
                                   double acc = 0.0;
                                   for (int j = 0; j < rows; ++j)
                                       acc += gm[static_cast<size_t>(i) * rows + j] *
                                              wn->data[static_cast<size_t>(j) * cols + c];
                                   wn->grad[static_cast<size_t>(i) * cols + c] += 4.0 * g * acc;
                               }
                       });
}

Tensor scale_channels(const Tensor& x, const Tensor& a) {
    check_rank4(x, "scale_channels input");
    const int b = x.dim(0), c = x.dim(1);
    if (a.rank() != 2 || a.dim(0) != b || a.dim(1) != c) {
        throw DimensionError("scale_channels scale must be (batch, channels)");
    }
    const int64_t spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(x.data());
    const auto& ad = a.data();
    for (int64_t i = 0; i < static_cast<int64_t>(b) * c; ++i) {
        const double s = ad[static_cast<size_t>(i)];
        for (int64_t j = 0; j < spatial; ++j) out[static_cast<size_t>(i * spatial + j)] *= s;
    }
    auto xn = x.node();
    auto an = a.node();
    return make_result(x.shape(), std::move(out), {xn, an},
                       [xn, an, b, c, spatial](TensorNode& self) {
                           for (int64_t i = 0; i < static_cast<int64_t>(b) * c; ++i) {
                               const double s = an->data[static_cast<size_t>(i)];
                               double dot = 0.0;
                               for (int64_t j = 0; j < spatial; ++j) {
                                   const size_t idx = static_cast<size_t>(i * spatial + j);
                                   if (xn->requires_grad)
                                       accumulate(xn, idx, self.grad[idx] * s);
                                   dot += self.grad[idx] * xn->data[idx];
                               }
                               if (an->requires_grad)
                                   accumulate(an, static_cast<size_t>(i), dot);
                           }
                       });
}

}  // namespace dssdn::ops
