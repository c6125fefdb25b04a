#pragma once

#include "gesture/nn.hpp"
#include "gesture/types.hpp"

#include <stdexcept>

namespace gesture {

struct FaceConfig {
    int d_audio = 64;
    int hidden = 96;
};

// Audio-to-face regressor: stride-1 temporal convolution encoder/decoder,
// 103 outputs per frame (3 jaw + 100 expression).
template <typename T>
struct FaceNetwork {
    FaceConfig cfg;
    nn::ParamStore<T> params;
    nn::Conv1d<T> enc1, enc2, enc3, enc4;
    nn::Conv1d<T> dec1, dec2;

    FaceNetwork() = default;
    FaceNetwork(const FaceConfig& cfg_, uint64_t seed) : cfg(cfg_) {
        Rng rng(seed);
        enc1 = nn::Conv1d<T>(params, "enc1", cfg.d_audio, cfg.hidden, 3, 1, 1, rng);
        enc2 = nn::Conv1d<T>(params, "enc2", cfg.hidden, cfg.hidden, 3, 1, 1, rng);
        enc3 = nn::Conv1d<T>(params, "enc3", cfg.hidden, cfg.hidden, 3, 1, 1, rng);
        enc4 = nn::Conv1d<T>(params, "enc4", cfg.hidden, cfg.hidden, 3, 1, 1, rng);
        dec1 = nn::Conv1d<T>(params, "dec1", cfg.hidden, cfg.hidden, 3, 1, 1, rng);
        dec2 = nn::Conv1d<T>(params, "dec2", cfg.hidden, kFaceDim, 3, 1, 1, rng);
    }
};

template <typename T>
ad::Var<T> face_forward_graph(const FaceNetwork<T>& net, const ad::Var<T>& frames, int batch) {
    ad::Var<T> h = ad::relu(net.enc1(frames, batch));
    h = ad::relu(net.enc2(h, batch));
    h = ad::relu(net.enc3(h, batch));
    h = ad::relu(net.enc4(h, batch));
    h = ad::relu(net.dec1(h, batch));
    return net.dec2(h, batch);
}

inline FaceParams face_forward(const FaceNetwork<float>& net, const AudioFeatures& audio) {
    if (audio.dim() != net.cfg.d_audio) throw std::runtime_error("audio dimension mismatch");
    MatF out = face_forward_graph(net, ad::Var<float>::leaf(audio.frames, false), 1).val();
    return FaceParams::from_joint(out);
}

template <typename T>
struct FaceLossParts {
    T total = 0, jaw = 0, expr = 0;
};

// jaw: mean absolute error; expression: mean squared error.
template <typename T>
ad::Var<T> face_loss_graph(const ad::Var<T>& gt, const ad::Var<T>& pred,
                           FaceLossParts<T>* parts = nullptr) {
    if (gt.val().rows() != pred.val().rows() || gt.val().cols() != pred.val().cols() ||
        gt.val().cols() != kFaceDim)
        throw std::runtime_error("shape mismatch");
    ad::Var<T> jaw = ad::mae_loss(ad::slice_cols(gt, 0, kJawDim), ad::slice_cols(pred, 0, kJawDim));
    ad::Var<T> expr =
        ad::mse_loss(ad::slice_cols(gt, kJawDim, kExprDim), ad::slice_cols(pred, kJawDim, kExprDim));
    ad::Var<T> total = ad::add(jaw, expr);
    if (parts) {
        parts->jaw = jaw.val()(0, 0);
        parts->expr = expr.val()(0, 0);
        parts->total = total.val()(0, 0);
    }
    return total;
}

template <typename T>
FaceLossParts<T> face_loss(const Mat<T>& gt, const Mat<T>& pred) {
    FaceLossParts<T> parts;
    face_loss_graph(ad::Var<T>::leaf(gt, false), ad::Var<T>::leaf(pred, false), &parts);
    return parts;
}

inline FaceLossParts<float> face_loss(const FaceParams& gt, const FaceParams& pred) {
    return face_loss<float>(gt.joint(), pred.joint());
}

}  // namespace gesture
