#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dssdn/tensor.hpp"

namespace dssdn::gradcheck {

struct Result {
    // |analytic - fd| / max(|fd|, floor); with floor = abs_tol / rel_tol a
    // bound of rel_tol enforces rel_tol relative and abs_tol absolute.
    double max_rel_err = 0.0;
    int64_t n_checked = 0;
};

// Central finite differences (h on 64-bit reals) of a scalar-valued forward
// against the tape's analytic gradients, over every element of every param.
inline Result check(const std::function<Tensor()>& forward_loss,
                    const std::vector<Tensor>& params, double h = 1e-3,
                    double floor = 1e-2) {
    Tensor loss = forward_loss();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (const Tensor& p0 : params) {
        Tensor p = p0;
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.data().size(), 0.0));
        p.zero_grad();
    }

    Result r;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (size_t i = 0; i < p.data().size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double up = forward_loss().item();
            p.data()[i] = saved - h;
            const double down = forward_loss().item();
            p.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[pi][i] - fd) / std::max(std::abs(fd), floor);
            r.max_rel_err = std::max(r.max_rel_err, err);
            ++r.n_checked;
        }
    }
    return r;
}

}  // namespace dssdn::gradcheck
