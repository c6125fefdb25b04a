#pragma once

#include "gesture/autodiff.hpp"
#include "gesture/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace testutil {

using gesture::Mat;
using gesture::MatD;

// Relative error with a small absolute floor for near-zero pairs.
inline double grad_mismatch(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    if (diff <= 1e-9) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(fd));
}

struct FdResult {
    double max_err = 0.0;
    long checked = 0;
};

// Central finite differences against backprop for every entry of every
// leaf. `build` must rebuild the scalar loss graph from current leaf values.
inline FdResult fd_check(const std::function<gesture::ad::Var<double>()>& build,
                         std::vector<gesture::ad::Var<double>> leaves,
                         double h = 1e-5) {
    namespace ad = gesture::ad;
    for (auto& l : leaves) l.zero_grad();
    ad::Var<double> loss = build();
    ad::backward(loss);
    std::vector<MatD> analytic;
    for (auto& l : leaves)
        analytic.push_back(l.grad().size() ? l.grad()
                                           : MatD::Zero(l.val().rows(), l.val().cols()));

    FdResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        MatD& v = leaves[li].val();
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double orig = v.data()[i];
            v.data()[i] = orig + h;
            const double up = build().val()(0, 0);
            v.data()[i] = orig - h;
            const double dn = build().val()(0, 0);
            v.data()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            res.max_err = std::max(res.max_err, grad_mismatch(analytic[li].data()[i], fd));
            ++res.checked;
        }
    }
    return res;
}

// Same check against a ParamStore, optionally striding through large tensors.
inline FdResult fd_check_params(const std::function<gesture::ad::Var<double>()>& build,
                                gesture::nn::ParamStore<double>& ps,
                                double h = 1e-5, Eigen::Index stride = 1) {
    namespace ad = gesture::ad;
    ps.zero_grad();
    ad::Var<double> loss = build();
    ad::backward(loss);
    std::vector<MatD> analytic;
    for (auto& e : ps.items)
        analytic.push_back(e.var.grad().size()
                               ? e.var.grad()
                               : MatD::Zero(e.var.val().rows(), e.var.val().cols()));

    FdResult res;
    for (size_t li = 0; li < ps.items.size(); ++li) {
        MatD& v = ps.items[li].var.val();
        for (Eigen::Index i = 0; i < v.size(); i += stride) {
            const double orig = v.data()[i];
            v.data()[i] = orig + h;
            const double up = build().val()(0, 0);
            v.data()[i] = orig - h;
            const double dn = build().val()(0, 0);
            v.data()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            res.max_err = std::max(res.max_err, grad_mismatch(analytic[li].data()[i], fd));
            ++res.checked;
        }
    }
    return res;
}

}  // namespace testutil
