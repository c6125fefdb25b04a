#pragma once

#include "gesture/nn.hpp"
#include "gesture/types.hpp"

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gesture {

enum class BodyPart { body, hand };

inline int part_dim(BodyPart p) { return p == BodyPart::body ? kBodyDim : kHandDim; }
inline const char* part_name(BodyPart p) { return p == BodyPart::body ? "body" : "hand"; }

template <typename T>
struct CodebookT {
    Mat<T> table;  // [V x latent]
    BodyPart part = BodyPart::body;
    int size() const { return static_cast<int>(table.rows()); }
    int mask_symbol() const { return size(); }
};
using Codebook = CodebookT<float>;

template <typename T>
using LatentSeq = Mat<T>;  // [t x latent]

struct VqConfig {
    int d_part = kBodyDim;
    int codebook_size = 256;  // V
    int latent = 64;
    int hidden = 128;
};

template <typename T>
struct QuantizeResult {
    Mat<T> codes;           // [t x latent]
    std::vector<int> indices;  // [t]
};

// Nearest row of the codebook under squared Euclidean distance; ties break
// to the lowest index.
template <typename T>
QuantizeResult<T> quantize(const Mat<T>& table, const Mat<T>& z) {
    if (table.rows() == 0) throw std::runtime_error("empty codebook");
    QuantizeResult<T> out;
    out.codes.resize(z.rows(), table.cols());
    out.indices.resize(static_cast<size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        int best = 0;
        T best_d = std::numeric_limits<T>::max();
        for (Eigen::Index r = 0; r < table.rows(); ++r) {
            const T d = (z.row(i) - table.row(r)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(r);
            }
        }
        out.indices[static_cast<size_t>(i)] = best;
        out.codes.row(i) = table.row(best);
    }
    return out;
}

template <typename T>
QuantizeResult<T> quantize(const CodebookT<T>& cb, const Mat<T>& z) {
    return quantize(cb.table, z);
}

// Row lookup; MASK or out-of-range indices are rejected.
template <typename T>
Mat<T> codebook_lookup(const Mat<T>& table, const std::vector<int>& indices) {
    Mat<T> out(static_cast<Eigen::Index>(indices.size()), table.cols());
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= table.rows())
            throw std::runtime_error("unresolved index");
        out.row(static_cast<Eigen::Index>(i)) = table.row(indices[i]);
    }
    return out;
}

template <typename T>
Mat<T> codebook_lookup(const CodebookT<T>& cb, const std::vector<int>& indices) {
    return codebook_lookup(cb.table, indices);
}

// Temporal VQ-VAE for one body part: 3 encoder conv blocks (two strided,
// net x4 downsample), mirrored transposed-conv decoder, nearest-neighbor
// codebook in between.
template <typename T>
struct VqNetwork {
    VqConfig cfg;
    BodyPart part = BodyPart::body;
    nn::ParamStore<T> params;
    nn::Conv1d<T> enc1, enc2, enc3;
    nn::ConvT1d<T> dec1, dec2;
    nn::Conv1d<T> dec3;
    ad::Var<T> codebook;

    VqNetwork() = default;
    VqNetwork(const VqConfig& cfg_, BodyPart part_, uint64_t seed) : cfg(cfg_), part(part_) {
        Rng rng(seed);
        enc1 = nn::Conv1d<T>(params, "enc1", cfg.d_part, cfg.hidden, 3, 1, 1, rng);
        enc2 = nn::Conv1d<T>(params, "enc2", cfg.hidden, cfg.hidden, 4, 2, 1, rng);
        enc3 = nn::Conv1d<T>(params, "enc3", cfg.hidden, cfg.latent, 4, 2, 1, rng);
        dec1 = nn::ConvT1d<T>(params, "dec1", cfg.latent, cfg.hidden, 4, 2, 1, rng);
        dec2 = nn::ConvT1d<T>(params, "dec2", cfg.hidden, cfg.hidden, 4, 2, 1, rng);
        dec3 = nn::Conv1d<T>(params, "dec3", cfg.hidden, cfg.d_part, 3, 1, 1, rng);
        codebook = params.add("codebook", rng.normal_mat<T>(cfg.codebook_size, cfg.latent, 0.5));
    }

    CodebookT<T> codebook_view() const { return {codebook.val(), part}; }

    ad::Var<T> encode_graph(const ad::Var<T>& x, int batch) const {
        return enc3(ad::relu(enc2(ad::relu(enc1(x, batch)), batch)), batch);
    }

    ad::Var<T> decode_graph(const ad::Var<T>& z, int batch) const {
        return dec3(ad::relu(dec2(ad::relu(dec1(z, batch)), batch)), batch);
    }
};

// [T x d_part] -> [T/4 x latent]
template <typename T>
Mat<T> encode(const VqNetwork<T>& net, const Mat<T>& part_poses) {
    if (part_poses.cols() != net.cfg.d_part)
        throw std::runtime_error("part dimension mismatch");
    if (part_poses.rows() < kDownsample || part_poses.rows() % kDownsample != 0)
        throw std::runtime_error("frame count not a multiple of 4");
    return net.encode_graph(ad::Var<T>::leaf(part_poses, false), 1).val();
}

// [t x latent] -> [4t x d_part]
template <typename T>
Mat<T> decode(const VqNetwork<T>& net, const Mat<T>& codes) {
    return net.decode_graph(ad::Var<T>::leaf(codes, false), 1).val();
}

template <typename T>
struct VqLossParts {
    T total = 0, rec = 0, eq = 0, vel = 0;
};

// Reconstruction MAE + codebook/commitment term + velocity term. The first
// commitment term trains only the encoder, the 0.25-weighted term only the
// codebook; rows are `batch` stacked samples for the velocity differences.
template <typename T>
ad::Var<T> vq_loss_graph(const ad::Var<T>& m, const ad::Var<T>& m_hat,
                         const ad::Var<T>& z, const ad::Var<T>& e, int batch,
                         VqLossParts<T>* parts = nullptr) {
    if (m.val().rows() != m_hat.val().rows() || m.val().cols() != m_hat.val().cols() ||
        z.val().rows() != e.val().rows() || z.val().cols() != e.val().cols())
        throw std::runtime_error("shape mismatch");
    ad::Var<T> rec = ad::mae_loss(m, m_hat);
    ad::Var<T> d1 = ad::sub(ad::stopgrad(e), z);
    ad::Var<T> d2 = ad::sub(e, ad::stopgrad(z));
    ad::Var<T> eq = ad::add(ad::mean_all(ad::cmul(d1, d1)),
                            ad::scale(ad::mean_all(ad::cmul(d2, d2)), T(0.25)));
    ad::Var<T> vel = ad::mean_all(ad::abs(ad::sub(ad::rowdiff(m, batch), ad::rowdiff(m_hat, batch))));
    ad::Var<T> total = ad::add(ad::add(rec, eq), vel);
    if (parts) {
        parts->rec = rec.val()(0, 0);
        parts->eq = eq.val()(0, 0);
        parts->vel = vel.val()(0, 0);
        parts->total = total.val()(0, 0);
    }
    return total;
}

template <typename T>
VqLossParts<T> vq_loss(const Mat<T>& m, const Mat<T>& m_hat, const Mat<T>& z,
                       const Mat<T>& e, int batch = 1) {
    VqLossParts<T> parts;
    vq_loss_graph(ad::Var<T>::leaf(m, false), ad::Var<T>::leaf(m_hat, false),
                  ad::Var<T>::leaf(z, false), ad::Var<T>::leaf(e, false), batch, &parts);
    return parts;
}

template <typename T>
struct VqStep {
    ad::Var<T> loss;
    VqLossParts<T> parts;
    std::vector<int> indices;
};

// One training forward: encode, quantize, straight-through, decode, loss.
template <typename T>
VqStep<T> vq_training_step(VqNetwork<T>& net, const Mat<T>& poses, int batch) {
    VqStep<T> out;
    ad::Var<T> m = ad::Var<T>::leaf(poses, false);
    ad::Var<T> z = net.encode_graph(m, batch);
    out.indices = quantize(net.codebook.val(), z.val()).indices;
    ad::Var<T> e = ad::gather_rows(net.codebook, out.indices);
    ad::Var<T> dec_in = ad::add(z, ad::stopgrad(ad::sub(e, z)));
    ad::Var<T> recon = net.decode_graph(dec_in, batch);
    out.loss = vq_loss_graph(m, recon, z, e, batch, &out.parts);
    return out;
}

// Snapshot of the non-differentiable pieces of one training step: the
// quantization assignment and the values both stop-gradient operators see.
template <typename T>
struct VqFrozenPoint {
    std::vector<int> indices;
    Mat<T> z0;
    Mat<T> codes0;
};

template <typename T>
VqFrozenPoint<T> vq_freeze_point(const VqNetwork<T>& net, const Mat<T>& poses, int batch) {
    VqFrozenPoint<T> fp;
    fp.z0 = net.encode_graph(ad::Var<T>::leaf(poses, false), batch).val();
    auto q = quantize(net.codebook.val(), fp.z0);
    fp.indices = std::move(q.indices);
    fp.codes0 = std::move(q.codes);
    return fp;
}

// Differentiable surrogate for gradient verification. Quantization indices,
// the straight-through residual, and both stop-gradient operands are frozen
// at the evaluation point, so the surrogate's true derivative equals the
// straight-through training gradient (the raw step is only piecewise
// differentiable in its parameters) while its value equals the step loss.
template <typename T>
ad::Var<T> vq_surrogate_loss(VqNetwork<T>& net, const Mat<T>& poses, int batch,
                             const VqFrozenPoint<T>& fp) {
    ad::Var<T> m = ad::Var<T>::leaf(poses, false);
    ad::Var<T> z = net.encode_graph(m, batch);
    ad::Var<T> e = ad::gather_rows(net.codebook, fp.indices);
    ad::Var<T> dec_in = ad::add(z, ad::Var<T>::leaf(fp.codes0 - fp.z0, false));
    ad::Var<T> recon = net.decode_graph(dec_in, batch);
    ad::Var<T> rec = ad::mae_loss(m, recon);
    ad::Var<T> d1 = ad::sub(ad::Var<T>::leaf(fp.codes0, false), z);
    ad::Var<T> d2 = ad::sub(e, ad::Var<T>::leaf(fp.z0, false));
    ad::Var<T> eq = ad::add(ad::mean_all(ad::cmul(d1, d1)),
                            ad::scale(ad::mean_all(ad::cmul(d2, d2)), T(0.25)));
    ad::Var<T> vel =
        ad::mean_all(ad::abs(ad::sub(ad::rowdiff(m, batch), ad::rowdiff(recon, batch))));
    return ad::add(ad::add(rec, eq), vel);
}

}  // namespace gesture
