#pragma once

#include "gesture/autodiff.hpp"

#include <string>
#include <vector>

namespace gesture {
namespace nn {

template <typename T>
using Var = ad::Var<T>;

// Ordered, named registry of trainable parameters. Declaration order is
// the serialization order.
template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Var<T> var;
    };
    std::vector<Entry> items;

    Var<T> add(const std::string& name, Mat<T> init) {
        items.push_back({name, Var<T>::leaf(std::move(init), true)});
        return items.back().var;
    }

    Var<T>* find(const std::string& name) {
        for (auto& e : items)
            if (e.name == name) return &e.var;
        return nullptr;
    }

    void zero_grad() {
        for (auto& e : items) e.var.zero_grad();
    }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& e : items) n += static_cast<size_t>(e.var.val().size());
        return n;
    }
};

template <typename T>
struct Linear {
    Var<T> w, b;
    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
        w = ps.add(name + ".w", rng.normal_mat<T>(in, out, std::sqrt(1.0 / in)));
        b = ps.add(name + ".b", Mat<T>::Zero(1, out));
    }
    Var<T> operator()(const Var<T>& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }
};

template <typename T>
struct Conv1d {
    Var<T> w, b;
    int k = 3, stride = 1, pad = 1;
    Conv1d() = default;
    Conv1d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k_,
           int stride_, int pad_, Rng& rng)
        : k(k_), stride(stride_), pad(pad_) {
        w = ps.add(name + ".w", rng.normal_mat<T>(k * cin, cout, std::sqrt(2.0 / (k * cin))));
        b = ps.add(name + ".b", Mat<T>::Zero(1, cout));
    }
    Var<T> operator()(const Var<T>& x, int batch) const {
        return ad::conv1d(x, w, b, batch, k, stride, pad);
    }
};

template <typename T>
struct ConvT1d {
    Var<T> w, b;
    int k = 4, stride = 2, pad = 1;
    ConvT1d() = default;
    ConvT1d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k_,
            int stride_, int pad_, Rng& rng)
        : k(k_), stride(stride_), pad(pad_) {
        w = ps.add(name + ".w", rng.normal_mat<T>(k * cin, cout, std::sqrt(2.0 / (k * cin))));
        b = ps.add(name + ".b", Mat<T>::Zero(1, cout));
    }
    Var<T> operator()(const Var<T>& x, int batch) const {
        return ad::conv1d_transpose(x, w, b, batch, k, stride, pad);
    }
};

template <typename T>
struct LayerNorm {
    Var<T> gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& name, int dim) {
        gain = ps.add(name + ".g", Mat<T>::Ones(1, dim));
        bias = ps.add(name + ".b", Mat<T>::Zero(1, dim));
    }
    Var<T> operator()(const Var<T>& x) const { return ad::layernorm_rows(x, gain, bias); }
};

template <typename T>
struct Embedding {
    Var<T> table;
    Embedding() = default;
    Embedding(ParamStore<T>& ps, const std::string& name, int rows, int dim, Rng& rng) {
        table = ps.add(name + ".table", rng.normal_mat<T>(rows, dim, 0.02));
    }
    Var<T> operator()(const std::vector<int>& idx) const { return ad::gather_rows(table, idx); }
};

template <typename T>
struct SelfAttention {
    Linear<T> wq, wk, wv, wo;
    int heads = 4;
    SelfAttention() = default;
    SelfAttention(ParamStore<T>& ps, const std::string& name, int dim, int heads_, Rng& rng)
        : wq(ps, name + ".q", dim, dim, rng),
          wk(ps, name + ".k", dim, dim, rng),
          wv(ps, name + ".v", dim, dim, rng),
          wo(ps, name + ".o", dim, dim, rng),
          heads(heads_) {}
    Var<T> operator()(const Var<T>& x, int batch) const {
        return wo(ad::mhsa_core(wq(x), wk(x), wv(x), batch, heads));
    }
};

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore<T>& ps, const std::string& name, int dim, int hidden, Rng& rng)
        : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}
    Var<T> operator()(const Var<T>& x) const { return fc2(ad::gelu(fc1(x))); }
};

// Pre-norm transformer encoder block.
template <typename T>
struct EncoderBlock {
    LayerNorm<T> ln1, ln2;
    SelfAttention<T> attn;
    Mlp<T> mlp;
    EncoderBlock() = default;
    EncoderBlock(ParamStore<T>& ps, const std::string& name, int dim, int heads,
                 int mlp_ratio, Rng& rng)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, heads, rng),
          mlp(ps, name + ".mlp", dim, dim * mlp_ratio, rng) {}
    Var<T> operator()(const Var<T>& x, int batch) const {
        Var<T> h = ad::add(x, attn(ln1(x), batch));
        return ad::add(h, mlp(ln2(h)));
    }
};

// Inverted dropout; identity at rate 0 (consumes no rng) and in inference.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, bool training, Rng& rng) {
    if (!training || rate <= 0.0) return x;
    Mat<T> mask(x.val().rows(), x.val().cols());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = rng.uniform() < rate ? T(0) : keep_scale;
    return ad::cmul(x, Var<T>::leaf(std::move(mask), false));
}

// Adam with bias correction; state is positional over the ParamStore.
template <typename T>
struct Adam {
    double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int step_count = 0;
    std::vector<Mat<T>> m, v;

    explicit Adam(double lr_ = 3e-4) : lr(lr_) {}

    void step(ParamStore<T>& ps) {
        if (m.empty()) {
            for (auto& e : ps.items) {
                m.push_back(Mat<T>::Zero(e.var.val().rows(), e.var.val().cols()));
                v.push_back(Mat<T>::Zero(e.var.val().rows(), e.var.val().cols()));
            }
        }
        ++step_count;
        const T bc1 = static_cast<T>(1.0 - std::pow(beta1, step_count));
        const T bc2 = static_cast<T>(1.0 - std::pow(beta2, step_count));
        for (size_t i = 0; i < ps.items.size(); ++i) {
            auto& var = ps.items[i].var;
            if (var.grad().size() == 0) continue;
            const Mat<T>& g = var.grad();
            m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1.0 - beta1) * g;
            v[i] = (static_cast<T>(beta2) * v[i].array() +
                    static_cast<T>(1.0 - beta2) * g.array().square())
                       .matrix();
            auto mhat = m[i].array() / bc1;
            auto vhat = v[i].array() / bc2;
            var.val().array() -= static_cast<T>(lr) * mhat / (vhat.sqrt() + static_cast<T>(eps));
        }
    }
};

// Row-wise softmax on a plain matrix (inference paths).
template <typename T>
Mat<T> softmax_rows(const Mat<T>& x) {
    Mat<T> p(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mx = x.row(i).maxCoeff();
        p.row(i) = (x.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

}  // namespace nn
}  // namespace gesture
