#pragma once

#include "gesture/nn.hpp"
#include "gesture/types.hpp"

#include <vector>

namespace gesture {

inline constexpr int kFeatureDim = 32;  // d_f

// Within-clip L1 deviation from each clip's own frame mean, normalized by
// 2K(K-1). The pairwise flag switches to summed L1 distances between
// distinct clip pairs under the same normalization.
double diversity(const std::vector<MotionClip>& clips, bool pairwise = false);

// Fréchet distance between Gaussian fits of two feature sets.
double fgd(const MatD& real_feats, const MatD& gen_feats);
double fgd_from_moments(const Eigen::VectorXd& mu_r, const MatD& cov_r,
                        const Eigen::VectorXd& mu_g, const MatD& cov_g);

// Mean absolute difference between paired feature rows.
double mae(const MatD& real_feats, const MatD& gen_feats);

struct BeatSet {
    std::vector<double> times;  // seconds, strictly ascending
};

// Local minima of the joint angular-velocity magnitude.
BeatSet motion_beats(const MotionClip& clip);
// Local maxima of the positive first difference of the energy channel
// (column 0 of the audio features).
BeatSet audio_beats(const AudioFeatures& audio, int fps = kDefaultFps);

// Mean Gaussian-kernel proximity of motion beats to their nearest audio beat.
double beat_consistency(const BeatSet& motion_b, const BeatSet& audio_b, double sigma = 0.1);

// Temporal-convolution autoencoder over joint pose frames; a clip's feature
// is the time-mean of its bottleneck sequence.
struct FeatureExtractor {
    nn::ParamStore<float> params;
    nn::Conv1d<float> enc1, enc2, enc3, enc4;
    nn::ConvT1d<float> dec1, dec2, dec3;
    nn::Conv1d<float> dec4;
    std::vector<float> loss_history;

    explicit FeatureExtractor(uint64_t seed = 1);
    ad::Var<float> encode_graph(const ad::Var<float>& x, int batch) const;
    ad::Var<float> decode_graph(const ad::Var<float>& z, int batch) const;
};

struct FeatureTrainOptions {
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 1e-3;
    uint64_t seed = 1;
};

FeatureExtractor train_feature_extractor(const std::vector<const MotionClip*>& real_clips,
                                         const FeatureTrainOptions& opts = {});

Eigen::VectorXd extract(const FeatureExtractor& fe, const MotionClip& clip);
MatD extract_all(const FeatureExtractor& fe, const std::vector<const MotionClip*>& clips);

}  // namespace gesture
