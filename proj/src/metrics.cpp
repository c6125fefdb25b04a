#include "gesture/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace gesture {

double diversity(const std::vector<MotionClip>& clips, bool pairwise) {
    const size_t K = clips.size();
    if (K < 2) throw std::runtime_error("need at least two clips");
    for (const auto& c : clips)
        if (c.frames() != clips.front().frames())
            throw std::runtime_error("shape mismatch");

    const double norm = 2.0 * static_cast<double>(K) * static_cast<double>(K - 1);
    double acc = 0.0;
    if (!pairwise) {
        for (const auto& clip : clips) {
            const MatD joint = clip.joint().cast<double>();
            const Eigen::RowVectorXd mean = joint.colwise().mean();
            for (Eigen::Index i = 0; i < joint.rows(); ++i)
                acc += (joint.row(i) - mean).cwiseAbs().sum();
        }
    } else {
        std::vector<MatD> joints;
        joints.reserve(K);
        for (const auto& c : clips) joints.push_back(c.joint().cast<double>());
        for (size_t a = 0; a < K; ++a)
            for (size_t b = 0; b < K; ++b) {
                if (a == b) continue;
                acc += (joints[a] - joints[b]).cwiseAbs().sum();
            }
    }
    return acc / norm;
}

namespace {

// Symmetric PSD square root with the tolerance rule for small negatives.
MatD psd_sqrt(const MatD& m) {
    Eigen::SelfAdjointEigenSolver<MatD> es((m + m.transpose()) / 2.0);
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-8 * scale) throw std::runtime_error("degenerate covariance");
        ev(i) = std::sqrt(std::max(0.0, ev(i)));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void fit_moments(const MatD& feats, Eigen::VectorXd& mu, MatD& cov) {
    const double n = static_cast<double>(feats.rows());
    mu = feats.colwise().mean().transpose();
    MatD centered = feats.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / (n - 1.0);
}

}  // namespace

double fgd_from_moments(const Eigen::VectorXd& mu_r, const MatD& cov_r,
                        const Eigen::VectorXd& mu_g, const MatD& cov_g) {
    const MatD a = psd_sqrt(cov_r);
    const MatD inner = a * cov_g * a;
    const MatD inner_sqrt = psd_sqrt(inner);
    return (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() -
           2.0 * inner_sqrt.trace();
}

double fgd(const MatD& real_feats, const MatD& gen_feats) {
    if (real_feats.cols() != gen_feats.cols()) throw std::runtime_error("shape mismatch");
    const Eigen::Index d = real_feats.cols();
    if (real_feats.rows() < d + 1 || gen_feats.rows() < d + 1)
        throw std::runtime_error("insufficient samples");
    Eigen::VectorXd mu_r, mu_g;
    MatD cov_r, cov_g;
    fit_moments(real_feats, mu_r, cov_r);
    fit_moments(gen_feats, mu_g, cov_g);
    return fgd_from_moments(mu_r, cov_r, mu_g, cov_g);
}

double mae(const MatD& real_feats, const MatD& gen_feats) {
    if (real_feats.rows() != gen_feats.rows() || real_feats.cols() != gen_feats.cols())
        throw std::runtime_error("unpaired feature sets");
    return (real_feats - gen_feats).cwiseAbs().mean();
}

namespace {

// Run-based extrema: a plateau counts once, anchored at its midpoint;
// boundary runs never qualify.
std::vector<double> local_extrema(const std::vector<double>& x, bool minima) {
    std::vector<double> centers;
    size_t i = 0;
    while (i < x.size()) {
        size_t j = i;
        while (j + 1 < x.size() && x[j + 1] == x[i]) ++j;
        if (i > 0 && j + 1 < x.size()) {
            const bool is_extremum = minima ? (x[i - 1] > x[i] && x[j + 1] > x[i])
                                            : (x[i - 1] < x[i] && x[j + 1] < x[i]);
            if (is_extremum)
                centers.push_back((static_cast<double>(i) + static_cast<double>(j)) / 2.0);
        }
        i = j + 1;
    }
    return centers;
}

}  // namespace

BeatSet motion_beats(const MotionClip& clip) {
    BeatSet out;
    if (clip.frames() < 3) return out;
    const MatF joint = clip.joint();
    std::vector<double> speed;
    for (Eigen::Index i = 0; i + 1 < joint.rows(); ++i)
        speed.push_back((joint.row(i + 1) - joint.row(i)).norm());
    for (double c : local_extrema(speed, true))
        out.times.push_back((c + 0.5) / clip.fps);
    return out;
}

BeatSet audio_beats(const AudioFeatures& audio, int fps) {
    BeatSet out;
    const Eigen::Index n = audio.frame_count();
    if (n < 3) return out;
    std::vector<double> onset(static_cast<size_t>(n), 0.0);
    for (Eigen::Index i = 1; i < n; ++i)
        onset[static_cast<size_t>(i)] =
            std::max(0.0, static_cast<double>(audio.frames(i, 0)) - audio.frames(i - 1, 0));
    for (double c : local_extrema(onset, false))
        if (onset[static_cast<size_t>(std::llround(std::floor(c)))] > 0.0)
            out.times.push_back(c / fps);
    return out;
}

double beat_consistency(const BeatSet& motion_b, const BeatSet& audio_b, double sigma) {
    if (sigma <= 0.0) throw std::runtime_error("sigma must be positive");
    if (audio_b.times.empty()) throw std::runtime_error("no reference beats");
    if (motion_b.times.empty()) return 0.0;
    double acc = 0.0;
    for (double tm : motion_b.times) {
        double best = std::numeric_limits<double>::max();
        for (double ta : audio_b.times) best = std::min(best, (tm - ta) * (tm - ta));
        acc += std::exp(-best / (2.0 * sigma * sigma));
    }
    return acc / static_cast<double>(motion_b.times.size());
}

// Pose frames plus first differences; velocity channels make the feature
// space sensitive to temporal structure, not just pose statistics.
MatF feature_input(const MotionClip& clip) {
    const MatF joint = clip.joint();
    MatF x(joint.rows(), 2 * kPoseDim);
    x.leftCols(kPoseDim) = joint;
    x.rightCols(kPoseDim).row(0).setZero();
    x.rightCols(kPoseDim).bottomRows(joint.rows() - 1) =
        joint.bottomRows(joint.rows() - 1) - joint.topRows(joint.rows() - 1);
    return x;
}

FeatureExtractor::FeatureExtractor(uint64_t seed) {
    Rng rng(seed);
    enc1 = nn::Conv1d<float>(params, "enc1", 2 * kPoseDim, 64, 5, 1, 2, rng);
    enc2 = nn::Conv1d<float>(params, "enc2", 64, 64, 4, 2, 1, rng);
    enc3 = nn::Conv1d<float>(params, "enc3", 64, 64, 4, 2, 1, rng);
    enc4 = nn::Conv1d<float>(params, "enc4", 64, kFeatureDim, 4, 2, 1, rng);
    dec1 = nn::ConvT1d<float>(params, "dec1", kFeatureDim, 64, 4, 2, 1, rng);
    dec2 = nn::ConvT1d<float>(params, "dec2", 64, 64, 4, 2, 1, rng);
    dec3 = nn::ConvT1d<float>(params, "dec3", 64, 64, 4, 2, 1, rng);
    dec4 = nn::Conv1d<float>(params, "dec4", 64, 2 * kPoseDim, 5, 1, 2, rng);
}

ad::Var<float> FeatureExtractor::encode_graph(const ad::Var<float>& x, int batch) const {
    return enc4(ad::relu(enc3(ad::relu(enc2(ad::relu(enc1(x, batch)), batch)), batch)), batch);
}

ad::Var<float> FeatureExtractor::decode_graph(const ad::Var<float>& z, int batch) const {
    return dec4(ad::relu(dec3(ad::relu(dec2(ad::relu(dec1(z, batch)), batch)), batch)), batch);
}

FeatureExtractor train_feature_extractor(const std::vector<const MotionClip*>& real_clips,
                                         const FeatureTrainOptions& opts) {
    if (real_clips.size() < 20) throw std::runtime_error("too few clips");
    const Eigen::Index frames = real_clips.front()->frames();
    for (const auto* c : real_clips)
        if (c->frames() != frames) throw std::runtime_error("shape mismatch");

    FeatureExtractor fe(derive_seed(opts.seed, "feature-extractor"));
    Rng order_rng(derive_seed(opts.seed, "feature-extractor/order"));
    nn::Adam<float> opt(opts.learning_rate);

    std::vector<size_t> order(real_clips.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(
                                        static_cast<int64_t>(i)))]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(opts.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(opts.batch_size));
            const int b = static_cast<int>(end - begin);
            MatF x(b * frames, 2 * kPoseDim);
            for (int j = 0; j < b; ++j)
                x.middleRows(j * frames, frames) =
                    feature_input(*real_clips[order[begin + static_cast<size_t>(j)]]);
            fe.params.zero_grad();
            auto input = ad::Var<float>::leaf(x, false);
            auto recon = fe.decode_graph(fe.encode_graph(input, b), b);
            auto loss = ad::mse_loss(input, recon);
            epoch_loss += loss.val()(0, 0);
            ++batches;
            ad::backward(loss);
            opt.step(fe.params);
        }
        fe.loss_history.push_back(static_cast<float>(epoch_loss / batches));
    }
    return fe;
}

Eigen::VectorXd extract(const FeatureExtractor& fe, const MotionClip& clip) {
    MatF z = fe.encode_graph(ad::Var<float>::leaf(feature_input(clip), false), 1).val();
    return z.colwise().mean().transpose().cast<double>();
}

MatD extract_all(const FeatureExtractor& fe, const std::vector<const MotionClip*>& clips) {
    MatD out(static_cast<Eigen::Index>(clips.size()), kFeatureDim);
    for (size_t i = 0; i < clips.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = extract(fe, *clips[i]).transpose();
    return out;
}

}  // namespace gesture
