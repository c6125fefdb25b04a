#pragma once

#include "gesture/mat.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

// Reverse-mode automatic differentiation over dense row-major matrices.
// A Var is a shared handle to one node of a dynamically built graph;
// backward(loss) accumulates gradients into every reachable node that
// requires them. Graphs are rebuilt per step and freed when handles drop.

namespace gesture {
namespace ad {

template <typename T>
struct VarNode {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::vector<std::shared_ptr<VarNode>> parents;
    std::function<void(VarNode&)> backfn;

    void ensure_grad() {
        if (!grad_alloc) {
            grad = Mat<T>::Zero(value.rows(), value.cols());
            grad_alloc = true;
        }
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<VarNode<T>> n) : n_(std::move(n)) {}

    static Var leaf(Mat<T> v, bool requires_grad = false) {
        auto n = std::make_shared<VarNode<T>>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    const Mat<T>& val() const { return n_->value; }
    Mat<T>& val() { return n_->value; }
    const Mat<T>& grad() const { return n_->grad; }
    bool defined() const { return n_ != nullptr; }
    bool requires_grad() const { return n_->requires_grad; }
    std::shared_ptr<VarNode<T>> node() const { return n_; }

    void zero_grad() {
        n_->grad_alloc = false;
        n_->grad.resize(0, 0);
    }

private:
    std::shared_ptr<VarNode<T>> n_;
};

namespace detail {

template <typename T>
Var<T> make_op(Mat<T> value, std::vector<Var<T>> inputs,
               std::function<void(VarNode<T>&)> backfn) {
    auto n = std::make_shared<VarNode<T>>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        n->parents.push_back(in.node());
        if (in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) n->backfn = std::move(backfn);
    return Var<T>(std::move(n));
}

template <typename T>
void accum(VarNode<T>& p, const Mat<T>& delta) {
    if (!p.requires_grad) return;
    p.ensure_grad();
    p.grad += delta;
}

}  // namespace detail

template <typename T>
void backward(const Var<T>& loss) {
    // Reverse post-order DFS: every node is processed after all of its users.
    std::vector<VarNode<T>*> order;
    std::unordered_set<VarNode<T>*> seen;
    std::vector<std::pair<VarNode<T>*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            VarNode<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad.setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        VarNode<T>* n = *it;
        if (n->backfn && n->grad_alloc) n->backfn(*n);
    }
}

// ---- elementwise / broadcast ops ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    return detail::make_op<T>(a.val() + b.val(), {a, b}, [pa, pb](VarNode<T>& s) {
        detail::accum(*pa, s.grad);
        detail::accum(*pb, s.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    return detail::make_op<T>(a.val() - b.val(), {a, b}, [pa, pb](VarNode<T>& s) {
        detail::accum(*pa, s.grad);
        detail::accum<T>(*pb, -s.grad);
    });
}

template <typename T>
Var<T> cmul(const Var<T>& a, const Var<T>& b) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    Mat<T> av = a.val(), bv = b.val();
    return detail::make_op<T>(av.cwiseProduct(bv), {a, b},
                              [pa, pb, av, bv](VarNode<T>& s) {
                                  detail::accum<T>(*pa, s.grad.cwiseProduct(bv));
                                  detail::accum<T>(*pb, s.grad.cwiseProduct(av));
                              });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    auto* pa = a.node().get();
    return detail::make_op<T>(a.val() * c, {a}, [pa, c](VarNode<T>& s) {
        detail::accum<T>(*pa, s.grad * c);
    });
}

// x [n x c] + row [1 x c], broadcast over rows.
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& row) {
    auto* px = x.node().get();
    auto* pr = row.node().get();
    Mat<T> v = x.val();
    v.rowwise() += Eigen::RowVector<T, Eigen::Dynamic>(row.val().row(0));
    return detail::make_op<T>(std::move(v), {x, row}, [px, pr](VarNode<T>& s) {
        detail::accum(*px, s.grad);
        detail::accum<T>(*pr, s.grad.colwise().sum());
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    auto* px = x.node().get();
    Mat<T> mask = (x.val().array() > T(0)).template cast<T>().matrix();
    return detail::make_op<T>(x.val().cwiseProduct(mask), {x},
                              [px, mask](VarNode<T>& s) {
                                  detail::accum<T>(*px, s.grad.cwiseProduct(mask));
                              });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    auto* px = x.node().get();
    const Mat<T>& v = x.val();
    Mat<T> y(v.rows(), v.cols());
    Mat<T> dydx(v.rows(), v.cols());
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const T z = v.data()[i];
        const T cdf = T(0.5) * (T(1) + std::erf(z * inv_sqrt2));
        const T pdf = std::exp(T(-0.5) * z * z) * inv_sqrt2pi;
        y.data()[i] = z * cdf;
        dydx.data()[i] = cdf + z * pdf;
    }
    return detail::make_op<T>(std::move(y), {x}, [px, dydx](VarNode<T>& s) {
        detail::accum<T>(*px, s.grad.cwiseProduct(dydx));
    });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
    auto* px = x.node().get();
    Mat<T> sign = x.val().array().sign().matrix();
    return detail::make_op<T>(x.val().cwiseAbs(), {x}, [px, sign](VarNode<T>& s) {
        detail::accum<T>(*px, s.grad.cwiseProduct(sign));
    });
}

// Value passes through, gradient does not.
template <typename T>
Var<T> stopgrad(const Var<T>& x) {
    return Var<T>::leaf(x.val(), false);
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    auto* px = x.node().get();
    const T n = static_cast<T>(x.val().size());
    Mat<T> v(1, 1);
    v(0, 0) = x.val().sum() / n;
    return detail::make_op<T>(std::move(v), {x}, [px, n](VarNode<T>& s) {
        const T g = s.grad(0, 0) / n;
        px->ensure_grad();
        if (px->requires_grad) px->grad.array() += g;
    });
}

// ---- linear algebra ----

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    Mat<T> av = a.val(), bv = b.val();
    return detail::make_op<T>(av * bv, {a, b}, [pa, pb, av, bv](VarNode<T>& s) {
        if (pa->requires_grad) detail::accum<T>(*pa, s.grad * bv.transpose());
        if (pb->requires_grad) detail::accum<T>(*pb, av.transpose() * s.grad);
    });
}

// ---- shape ops ----

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    const auto ca = a.val().cols(), cb = b.val().cols();
    Mat<T> v(a.val().rows(), ca + cb);
    v.leftCols(ca) = a.val();
    v.rightCols(cb) = b.val();
    return detail::make_op<T>(std::move(v), {a, b}, [pa, pb, ca, cb](VarNode<T>& s) {
        detail::accum<T>(*pa, s.grad.leftCols(ca));
        detail::accum<T>(*pb, s.grad.rightCols(cb));
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, Eigen::Index j0, Eigen::Index n) {
    auto* px = x.node().get();
    return detail::make_op<T>(x.val().middleCols(j0, n), {x}, [px, j0, n](VarNode<T>& s) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        px->grad.middleCols(j0, n) += s.grad;
    });
}

// Embedding lookup: one output row per index.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::vector<int> idx) {
    auto* pt = table.node().get();
    Mat<T> v(static_cast<Eigen::Index>(idx.size()), table.val().cols());
    for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = table.val().row(idx[i]);
    return detail::make_op<T>(std::move(v), {table}, [pt, idx = std::move(idx)](VarNode<T>& s) {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            pt->grad.row(idx[i]) += s.grad.row(static_cast<Eigen::Index>(i));
    });
}

// Per-sample frame difference: rows of x are `batch` blocks of length len;
// output blocks have length len-1 with row i = x[i+1] - x[i].
template <typename T>
Var<T> rowdiff(const Var<T>& x, int batch) {
    auto* px = x.node().get();
    const Eigen::Index len = x.val().rows() / batch;
    const Eigen::Index c = x.val().cols();
    Mat<T> v(batch * (len - 1), c);
    for (int b = 0; b < batch; ++b)
        v.middleRows(b * (len - 1), len - 1) =
            x.val().middleRows(b * len + 1, len - 1) - x.val().middleRows(b * len, len - 1);
    return detail::make_op<T>(std::move(v), {x}, [px, batch, len](VarNode<T>& s) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int b = 0; b < batch; ++b) {
            px->grad.middleRows(b * len + 1, len - 1) += s.grad.middleRows(b * (len - 1), len - 1);
            px->grad.middleRows(b * len, len - 1) -= s.grad.middleRows(b * (len - 1), len - 1);
        }
    });
}

// ---- temporal convolutions ----
// x holds `batch` samples of length len stacked along rows, channels as
// columns; w is [k*c_in x c_out] with taps as row blocks; convolution never
// crosses sample boundaries.

inline Eigen::Index conv_out_len(Eigen::Index len, int k, int stride, int pad) {
    return (len + 2 * pad - k) / stride + 1;
}

inline Eigen::Index convT_out_len(Eigen::Index len, int k, int stride, int pad) {
    return (len - 1) * stride + k - 2 * pad;
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int batch,
              int k, int stride, int pad) {
    auto* px = x.node().get();
    auto* pw = w.node().get();
    auto* pb = bias.node().get();
    const Eigen::Index len = x.val().rows() / batch;
    const Eigen::Index cin = x.val().cols();
    const Eigen::Index cout = w.val().cols();
    const Eigen::Index lo = conv_out_len(len, k, stride, pad);
    Mat<T> y(batch * lo, cout);
    y.rowwise() = Eigen::RowVector<T, Eigen::Dynamic>(bias.val().row(0));
    Mat<T> xv = x.val(), wv = w.val();
    for (int b = 0; b < batch; ++b) {
        for (int kk = 0; kk < k; ++kk) {
            // output rows o where input index i = o*stride + kk - pad is valid
            const int i0 = kk - pad;
            Eigen::Index o_begin = 0;
            while (o_begin < lo && i0 + static_cast<int>(o_begin) * stride < 0) ++o_begin;
            Eigen::Index o_end = lo;
            while (o_end > o_begin && i0 + static_cast<int>(o_end - 1) * stride >= len) --o_end;
            if (o_end <= o_begin) continue;
            const Eigen::Index n = o_end - o_begin;
            if (stride == 1) {
                y.middleRows(b * lo + o_begin, n).noalias() +=
                    xv.middleRows(b * len + i0 + o_begin, n) * wv.middleRows(kk * cin, cin);
            } else {
                for (Eigen::Index o = o_begin; o < o_end; ++o)
                    y.row(b * lo + o).noalias() +=
                        xv.row(b * len + i0 + o * stride) * wv.middleRows(kk * cin, cin);
            }
        }
    }
    return detail::make_op<T>(
        std::move(y), {x, w, bias},
        [px, pw, pb, xv, wv, batch, k, stride, pad, len, cin, lo](VarNode<T>& s) {
            if (pb->requires_grad) detail::accum<T>(*pb, s.grad.colwise().sum());
            if (px->requires_grad) px->ensure_grad();
            if (pw->requires_grad) pw->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                for (int kk = 0; kk < k; ++kk) {
                    const int i0 = kk - pad;
                    Eigen::Index o_begin = 0;
                    while (o_begin < lo && i0 + static_cast<int>(o_begin) * stride < 0) ++o_begin;
                    Eigen::Index o_end = lo;
                    while (o_end > o_begin && i0 + static_cast<int>(o_end - 1) * stride >= len) --o_end;
                    if (o_end <= o_begin) continue;
                    const Eigen::Index n = o_end - o_begin;
                    if (stride == 1) {
                        if (px->requires_grad)
                            px->grad.middleRows(b * len + i0 + o_begin, n).noalias() +=
                                s.grad.middleRows(b * lo + o_begin, n) * wv.middleRows(kk * cin, cin).transpose();
                        if (pw->requires_grad)
                            pw->grad.middleRows(kk * cin, cin).noalias() +=
                                xv.middleRows(b * len + i0 + o_begin, n).transpose() * s.grad.middleRows(b * lo + o_begin, n);
                    } else {
                        for (Eigen::Index o = o_begin; o < o_end; ++o) {
                            if (px->requires_grad)
                                px->grad.row(b * len + i0 + o * stride).noalias() +=
                                    s.grad.row(b * lo + o) * wv.middleRows(kk * cin, cin).transpose();
                            if (pw->requires_grad)
                                pw->grad.middleRows(kk * cin, cin).noalias() +=
                                    xv.row(b * len + i0 + o * stride).transpose() * s.grad.row(b * lo + o);
                        }
                    }
                }
            }
        });
}

template <typename T>
Var<T> conv1d_transpose(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
                        int batch, int k, int stride, int pad) {
    auto* px = x.node().get();
    auto* pw = w.node().get();
    auto* pb = bias.node().get();
    const Eigen::Index len = x.val().rows() / batch;
    const Eigen::Index cin = x.val().cols();
    const Eigen::Index cout = w.val().cols();
    const Eigen::Index lo = convT_out_len(len, k, stride, pad);
    Mat<T> y(batch * lo, cout);
    y.rowwise() = Eigen::RowVector<T, Eigen::Dynamic>(bias.val().row(0));
    Mat<T> xv = x.val(), wv = w.val();
    for (int b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < len; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const Eigen::Index o = i * stride + kk - pad;
                if (o < 0 || o >= lo) continue;
                y.row(b * lo + o).noalias() += xv.row(b * len + i) * wv.middleRows(kk * cin, cin);
            }
    return detail::make_op<T>(
        std::move(y), {x, w, bias},
        [px, pw, pb, xv, wv, batch, k, stride, pad, len, cin, lo](VarNode<T>& s) {
            if (pb->requires_grad) detail::accum<T>(*pb, s.grad.colwise().sum());
            if (px->requires_grad) px->ensure_grad();
            if (pw->requires_grad) pw->ensure_grad();
            for (int b = 0; b < batch; ++b)
                for (Eigen::Index i = 0; i < len; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const Eigen::Index o = i * stride + kk - pad;
                        if (o < 0 || o >= lo) continue;
                        if (px->requires_grad)
                            px->grad.row(b * len + i).noalias() +=
                                s.grad.row(b * lo + o) * wv.middleRows(kk * cin, cin).transpose();
                        if (pw->requires_grad)
                            pw->grad.middleRows(kk * cin, cin).noalias() +=
                                xv.row(b * len + i).transpose() * s.grad.row(b * lo + o);
                    }
        });
}

// ---- normalization / attention / losses ----

template <typename T>
Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                      T eps = T(1e-5)) {
    auto* px = x.node().get();
    auto* pg = gain.node().get();
    auto* pb = bias.node().get();
    const Eigen::Index n = x.val().rows(), c = x.val().cols();
    Mat<T> xhat(n, c);
    Mat<T> inv_std(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.val().row(i).mean();
        const T var = (x.val().row(i).array() - mu).square().sum() / static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std(i, 0) = is;
        xhat.row(i) = (x.val().row(i).array() - mu).matrix() * is;
    }
    Mat<T> y = xhat;
    for (Eigen::Index i = 0; i < n; ++i)
        y.row(i) = y.row(i).cwiseProduct(gain.val().row(0)) + bias.val().row(0);
    const Mat<T> gv = gain.val();
    return detail::make_op<T>(
        std::move(y), {x, gain, bias}, [px, pg, pb, xhat, inv_std, gv, c](VarNode<T>& s) {
            if (pg->requires_grad) detail::accum<T>(*pg, s.grad.cwiseProduct(xhat).colwise().sum());
            if (pb->requires_grad) detail::accum<T>(*pb, s.grad.colwise().sum());
            if (!px->requires_grad) return;
            px->ensure_grad();
            const T cn = static_cast<T>(c);
            for (Eigen::Index i = 0; i < s.grad.rows(); ++i) {
                Eigen::RowVector<T, Eigen::Dynamic> dyh = s.grad.row(i).cwiseProduct(gv.row(0));
                const T m1 = dyh.mean();
                const T m2 = dyh.cwiseProduct(xhat.row(i)).sum() / cn;
                px->grad.row(i) += (dyh.array() - m1 - xhat.row(i).array() * m2).matrix() * inv_std(i, 0);
            }
        });
}

// Multi-head self-attention core over projected q/k/v; each sample's rows
// attend only within that sample.
template <typename T>
Var<T> mhsa_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, int batch,
                 int heads) {
    auto* pq = q.node().get();
    auto* pk = k.node().get();
    auto* pv = v.node().get();
    const Eigen::Index t = q.val().rows() / batch;
    const Eigen::Index d = q.val().cols();
    const Eigen::Index dh = d / heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> y(batch * t, d);
    // keep the attention probabilities for backward
    auto probs = std::make_shared<std::vector<Mat<T>>>();
    probs->reserve(static_cast<size_t>(batch) * heads);
    Mat<T> qv = q.val(), kv = k.val(), vv = v.val();
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            auto qh = qv.block(b * t, h * dh, t, dh);
            auto kh = kv.block(b * t, h * dh, t, dh);
            auto vh = vv.block(b * t, h * dh, t, dh);
            Mat<T> scores = (qh * kh.transpose()) * inv_scale;
            for (Eigen::Index i = 0; i < t; ++i) {
                const T mx = scores.row(i).maxCoeff();
                scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
                scores.row(i) /= scores.row(i).sum();
            }
            y.block(b * t, h * dh, t, dh).noalias() = scores * vh;
            probs->push_back(std::move(scores));
        }
    }
    return detail::make_op<T>(
        std::move(y), {q, k, v},
        [pq, pk, pv, qv, kv, vv, probs, batch, heads, t, dh, inv_scale](VarNode<T>& s) {
            if (pq->requires_grad) pq->ensure_grad();
            if (pk->requires_grad) pk->ensure_grad();
            if (pv->requires_grad) pv->ensure_grad();
            for (int b = 0; b < batch; ++b)
                for (int h = 0; h < heads; ++h) {
                    const Mat<T>& p = (*probs)[static_cast<size_t>(b) * heads + h];
                    auto qh = qv.block(b * t, h * dh, t, dh);
                    auto kh = kv.block(b * t, h * dh, t, dh);
                    auto vh = vv.block(b * t, h * dh, t, dh);
                    auto dy = s.grad.block(b * t, h * dh, t, dh);
                    if (pv->requires_grad)
                        pv->grad.block(b * t, h * dh, t, dh).noalias() += p.transpose() * dy;
                    Mat<T> dp = dy * vh.transpose();
                    // softmax jacobian per row
                    Mat<T> ds(t, t);
                    for (Eigen::Index i = 0; i < t; ++i) {
                        const T dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                        ds.row(i) = p.row(i).cwiseProduct(dp.row(i).array().matrix() -
                                                          Mat<T>::Constant(1, t, dot));
                    }
                    ds *= inv_scale;
                    if (pq->requires_grad)
                        pq->grad.block(b * t, h * dh, t, dh).noalias() += ds * kh;
                    if (pk->requires_grad)
                        pk->grad.block(b * t, h * dh, t, dh).noalias() += ds.transpose() * qh;
                }
        });
}

// Mean cross-entropy of row-wise categorical logits against integer targets.
template <typename T>
Var<T> ce_loss_mean(const Var<T>& logits, std::vector<int> targets) {
    auto* pl = logits.node().get();
    const Eigen::Index n = logits.val().rows();
    Mat<T> p(n, logits.val().cols());
    T loss = T(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mx = logits.val().row(i).maxCoeff();
        p.row(i) = (logits.val().row(i).array() - mx).exp().matrix();
        const T z = p.row(i).sum();
        p.row(i) /= z;
        loss -= logits.val()(i, targets[static_cast<size_t>(i)]) - mx - std::log(z);
    }
    loss /= static_cast<T>(n);
    Mat<T> out(1, 1);
    out(0, 0) = loss;
    return detail::make_op<T>(std::move(out), {logits},
                              [pl, p, targets = std::move(targets), n](VarNode<T>& s) {
                                  if (!pl->requires_grad) return;
                                  pl->ensure_grad();
                                  const T g = s.grad(0, 0) / static_cast<T>(n);
                                  Mat<T> d = p * g;
                                  for (Eigen::Index i = 0; i < n; ++i)
                                      d(i, targets[static_cast<size_t>(i)]) -= g;
                                  pl->grad += d;
                              });
}

// ---- composite helpers ----

template <typename T>
Var<T> mae_loss(const Var<T>& a, const Var<T>& b) {
    return mean_all(abs(sub(a, b)));
}

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
    Var<T> d = sub(a, b);
    return mean_all(cmul(d, d));
}

}  // namespace ad
}  // namespace gesture
