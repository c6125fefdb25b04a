#pragma once

#include "gesture/mat.hpp"

namespace gesture {

inline constexpr int kBodyDim = 63;
inline constexpr int kHandDim = 90;
inline constexpr int kPoseDim = kBodyDim + kHandDim;  // body-first concatenation
inline constexpr int kJawDim = 3;
inline constexpr int kExprDim = 100;
inline constexpr int kFaceDim = kJawDim + kExprDim;
inline constexpr int kDefaultFps = 30;
inline constexpr int kWindowFrames = 88;  // fixed training window T
inline constexpr int kDownsample = 4;     // frames per token
inline constexpr int kWindowTokens = kWindowFrames / kDownsample;  // 22
inline constexpr int kCarryFrames = 8;    // overlap carried between segments
inline constexpr int kCarryTokens = kCarryFrames / kDownsample;    // 2

// A pose sequence split into body and hand axis-angle rotation channels.
struct MotionClip {
    MatF body;  // [T x 63], radians
    MatF hand;  // [T x 90], radians
    int fps = kDefaultFps;

    Eigen::Index frames() const { return body.rows(); }

    // body‖hand, columns 0-62 body, 63-152 hand
    MatF joint() const {
        MatF m(body.rows(), kPoseDim);
        m.leftCols(kBodyDim) = body;
        m.rightCols(kHandDim) = hand;
        return m;
    }

    static MotionClip from_joint(const MatF& joint, int fps = kDefaultFps) {
        MotionClip c;
        c.body = joint.leftCols(kBodyDim);
        c.hand = joint.rightCols(kHandDim);
        c.fps = fps;
        return c;
    }
};

// Jaw pose plus expression coefficients, 103 values per frame.
struct FaceParams {
    MatF jaw;         // [T x 3]
    MatF expression;  // [T x 100]

    Eigen::Index frames() const { return jaw.rows(); }

    MatF joint() const {
        MatF m(jaw.rows(), kFaceDim);
        m.leftCols(kJawDim) = jaw;
        m.rightCols(kExprDim) = expression;
        return m;
    }

    static FaceParams from_joint(const MatF& joint) {
        FaceParams f;
        f.jaw = joint.leftCols(kJawDim);
        f.expression = joint.rightCols(kExprDim);
        return f;
    }
};

// MFCC-style per-frame audio features aligned to motion at 30 FPS.
struct AudioFeatures {
    MatF frames;  // [T x d_a]
    Eigen::Index frame_count() const { return frames.rows(); }
    Eigen::Index dim() const { return frames.cols(); }
};

struct SpeakerId {
    int value = 0;
};

// Discrete token grid; column 0 indexes the body codebook, column 1 the
// hand codebook. The MASK symbol is V (one past the last codebook index).
struct IndexGrid {
    MatI entries;  // [t x 2]
    Eigen::Index tokens() const { return entries.rows(); }

    static IndexGrid full_mask(Eigen::Index tokens, int mask_symbol) {
        IndexGrid g;
        g.entries = MatI::Constant(tokens, 2, mask_symbol);
        return g;
    }
};

// Frame differences of the concatenated body‖hand representation,
// row i = frame(i+1) - frame(i).
MatF velocity(const MotionClip& clip);

// Throws "frame misalignment" or "non-finite data"; accepts iff frame
// counts agree, everything is finite, and T is a positive multiple of 4.
void validate_pair(const MotionClip& clip, const AudioFeatures& audio);

// Appends b after a, removing the first drop_overlap_frames frames of b.
MotionClip concat_clips(const MotionClip& a, const MotionClip& b,
                        Eigen::Index drop_overlap_frames);

}  // namespace gesture
