#pragma once

#include "gesture/ret.hpp"
#include "gesture/types.hpp"
#include "gesture/vqvae.hpp"

#include <memory>
#include <stdexcept>
#include <vector>

namespace gesture {

struct IriParams {
    int max_iters = 10;
    double tau0 = 0.9;
    double tau_min = 0.0;
    double guidance_scale = 2.0;  // s

    void validate() const {
        if (max_iters < 1) throw std::runtime_error("max_iters must be at least 1");
        if (!(tau0 >= 0.0 && tau0 <= 1.0)) throw std::runtime_error("tau0 out of [0,1]");
        if (!(tau_min >= 0.0 && tau_min < 1.0 && tau_min <= tau0))
            throw std::runtime_error("tau_min out of [0,1) or above tau0");
        if (guidance_scale < 1.0) throw std::runtime_error("guidance scale below 1");
    }
};

// Fixed positions that are never masked nor re-predicted.
struct GenerationContext {
    struct Anchor {
        int row = 0;
        int col = 0;  // 0 body, 1 hand
        int index = 0;
    };
    std::vector<Anchor> pre_filled;
};

// logit = s * cond - (s - 1) * uncond, applied before the softmax.
template <typename T>
Mat<T> cfg_logits(const Mat<T>& cond, const Mat<T>& uncond, double s) {
    if (cond.rows() != uncond.rows() || cond.cols() != uncond.cols())
        throw std::runtime_error("shape mismatch");
    return (s * cond.array() - (s - 1.0) * uncond.array()).matrix();
}

template <typename T>
RetLogits<T> cfg_logits(const RetLogits<T>& cond, const RetLogits<T>& uncond, double s) {
    return {cfg_logits(cond.body, uncond.body, s), cfg_logits(cond.hand, uncond.hand, s)};
}

// Linearly decaying confidence threshold.
inline double threshold(int k, const IriParams& p) {
    if (k < 0 || k >= p.max_iters) throw std::runtime_error("iteration index out of range");
    if (p.max_iters == 1) return p.tau_min;
    return p.tau0 - (p.tau0 - p.tau_min) * static_cast<double>(k) /
                        static_cast<double>(p.max_iters - 1);
}

// Predictor abstraction so the reconstruction loop can run against the RET
// network or against stubs.
struct LogitSource {
    virtual ~LogitSource() = default;
    virtual RetLogits<float> logits(const IndexGrid& current, bool conditioned) = 0;
};

struct IriResult {
    IndexGrid grid;
    int iterations = 0;
    std::vector<IndexGrid> history;  // grid after each iteration
};

// Iterative reconstruction: start fully masked (bar pre-filled context),
// reveal argmax predictions whose confidence clears the decaying threshold,
// force-reveal the remainder on the last iteration.
inline IriResult iri_generate(LogitSource& src, int tokens, int mask_symbol,
                              const IriParams& p, const GenerationContext& ctx) {
    p.validate();
    IriResult res;
    res.grid = IndexGrid::full_mask(tokens, mask_symbol);
    MatI frozen = MatI::Zero(tokens, 2);
    for (const auto& a : ctx.pre_filled) {
        if (a.row < 0 || a.row >= tokens || a.col < 0 || a.col > 1 || a.index < 0 ||
            a.index >= mask_symbol)
            throw std::runtime_error("invalid anchor");
        res.grid.entries(a.row, a.col) = a.index;
        frozen(a.row, a.col) = 1;
    }

    for (int k = 0; k < p.max_iters; ++k) {
        if ((res.grid.entries.array() == mask_symbol).count() == 0) break;

        RetLogits<float> combined = src.logits(res.grid, true);
        if (p.guidance_scale != 1.0) {
            RetLogits<float> uncond = src.logits(res.grid, false);
            combined = cfg_logits(combined, uncond, p.guidance_scale);
        }
        if (!combined.body.allFinite() || !combined.hand.allFinite())
            throw std::runtime_error("non-finite logits");

        const MatF prob_body = nn::softmax_rows(combined.body);
        const MatF prob_hand = nn::softmax_rows(combined.hand);
        const double tau = threshold(k, p);
        const bool final_iter = k == p.max_iters - 1;

        for (int i = 0; i < tokens; ++i)
            for (int c = 0; c < 2; ++c) {
                if (res.grid.entries(i, c) != mask_symbol) continue;
                const MatF& prob = c == 0 ? prob_body : prob_hand;
                int best = 0;
                for (Eigen::Index v = 1; v < prob.cols(); ++v)
                    if (prob(i, v) > prob(i, best)) best = static_cast<int>(v);
                if (final_iter || prob(i, best) >= tau) {
                    res.grid.entries(i, c) = best;
                    frozen(i, c) = 1;
                }
            }
        res.iterations = k + 1;
        res.history.push_back(res.grid);
    }
    return res;
}

// Binds a frozen RET network, one audio window, and a speaker id.
class RetLogitSource : public LogitSource {
public:
    RetLogitSource(const RetNetwork<float>& net, MatF audio_feat, SpeakerId id)
        : net_(net), audio_feat_(std::move(audio_feat)), id_(id) {}

    RetLogits<float> logits(const IndexGrid& current, bool conditioned) override {
        return ret_forward(net_, current,
                           conditioned ? std::optional<MatF>(audio_feat_) : std::nullopt, id_);
    }

private:
    const RetNetwork<float>& net_;
    MatF audio_feat_;
    SpeakerId id_;
};

inline IriResult iri_generate(const RetNetwork<float>& net, const AudioFeatures& audio,
                              SpeakerId id, const IriParams& p, const GenerationContext& ctx) {
    if (audio.frame_count() != net.cfg.tokens * kDownsample)
        throw std::runtime_error("frame misalignment");
    RetLogitSource src(net, encode_audio(net, audio.frames), id);
    return iri_generate(src, net.cfg.tokens, net.cfg.mask_symbol(), p, ctx);
}

// Anchored variant; target poses are quantized to indices before anchoring.
inline IriResult edit_generate(const RetNetwork<float>& net, const AudioFeatures& audio,
                               SpeakerId id, const IriParams& p,
                               const GenerationContext& anchors) {
    return iri_generate(net, audio, id, p, anchors);
}

// Quantizes a clip and anchors the requested (token, part) positions to it.
inline GenerationContext anchors_from_clip(const VqNetwork<float>& vq_body,
                                           const VqNetwork<float>& vq_hand,
                                           const MotionClip& clip,
                                           const std::vector<std::pair<int, int>>& positions) {
    const auto body_idx = quantize(vq_body.codebook.val(), encode(vq_body, clip.body)).indices;
    const auto hand_idx = quantize(vq_hand.codebook.val(), encode(vq_hand, clip.hand)).indices;
    GenerationContext ctx;
    for (const auto& [row, col] : positions)
        ctx.pre_filled.push_back(
            {row, col, col == 0 ? body_idx[static_cast<size_t>(row)] : hand_idx[static_cast<size_t>(row)]});
    return ctx;
}

// Decodes a token grid through both part decoders.
inline MotionClip decode_grid(const VqNetwork<float>& vq_body, const VqNetwork<float>& vq_hand,
                              const IndexGrid& grid) {
    std::vector<int> body_idx, hand_idx;
    for (Eigen::Index i = 0; i < grid.tokens(); ++i) {
        body_idx.push_back(grid.entries(i, 0));
        hand_idx.push_back(grid.entries(i, 1));
    }
    MotionClip clip;
    clip.body = decode(vq_body, codebook_lookup(vq_body.codebook.val(), body_idx));
    clip.hand = decode(vq_hand, codebook_lookup(vq_hand.codebook.val(), hand_idx));
    return clip;
}

// Long audio: fixed 88-frame windows, each window after the first re-uses
// the previous window's final 8 frames (2 tokens) as pre-filled context;
// overlap frames are dropped when stitching. A short tail window is padded
// with its last frame and truncated after decoding.
inline MotionClip generate_long(const RetNetwork<float>& net, const VqNetwork<float>& vq_body,
                                const VqNetwork<float>& vq_hand, const AudioFeatures& audio_full,
                                SpeakerId id, const IriParams& p,
                                std::vector<IndexGrid>* segment_grids = nullptr) {
    const Eigen::Index total = audio_full.frame_count();
    if (total < 1) throw std::runtime_error("empty audio");

    auto window_audio = [&](Eigen::Index start, Eigen::Index len) {
        AudioFeatures w;
        w.frames.resize(kWindowFrames, audio_full.dim());
        w.frames.topRows(len) = audio_full.frames.middleRows(start, len);
        for (Eigen::Index i = len; i < kWindowFrames; ++i)
            w.frames.row(i) = audio_full.frames.row(start + len - 1);
        return w;
    };

    const Eigen::Index first_len = std::min<Eigen::Index>(kWindowFrames, total);
    IriResult first = iri_generate(net, window_audio(0, first_len), id, p, {});
    if (segment_grids) segment_grids->push_back(first.grid);
    MotionClip out = decode_grid(vq_body, vq_hand, first.grid);
    if (first_len < kWindowFrames) {
        out.body = out.body.topRows(first_len).eval();
        out.hand = out.hand.topRows(first_len).eval();
    }
    IndexGrid prev = first.grid;
    Eigen::Index covered = first_len;

    while (covered < total) {
        const Eigen::Index start = covered - kCarryFrames;
        const Eigen::Index len = std::min<Eigen::Index>(kWindowFrames, total - start);
        GenerationContext ctx;
        for (int r = 0; r < kCarryTokens; ++r)
            for (int c = 0; c < 2; ++c)
                ctx.pre_filled.push_back(
                    {r, c, prev.entries(kWindowTokens - kCarryTokens + r, c)});
        IriResult seg = iri_generate(net, window_audio(start, len), id, p, ctx);
        if (segment_grids) segment_grids->push_back(seg.grid);
        MotionClip decoded = decode_grid(vq_body, vq_hand, seg.grid);
        if (len < kWindowFrames) {
            decoded.body = decoded.body.topRows(len).eval();
            decoded.hand = decoded.hand.topRows(len).eval();
        }
        out = concat_clips(out, decoded, kCarryFrames);
        prev = seg.grid;
        covered = start + len;
    }
    return out;
}

}  // namespace gesture
