#include "gesture/types.hpp"

#include <stdexcept>

namespace gesture {

MatF velocity(const MotionClip& clip) {
    if (clip.frames() < 2) throw std::runtime_error("insufficient frames");
    const MatF joint = clip.joint();
    return joint.bottomRows(joint.rows() - 1) - joint.topRows(joint.rows() - 1);
}

void validate_pair(const MotionClip& clip, const AudioFeatures& audio) {
    const Eigen::Index t = clip.body.rows();
    if (t == 0 || clip.hand.rows() != t || audio.frames.rows() != t)
        throw std::runtime_error("frame misalignment");
    if (t % kDownsample != 0)
        throw std::runtime_error("frame count not a multiple of 4");
    if (clip.body.cols() != kBodyDim || clip.hand.cols() != kHandDim)
        throw std::runtime_error("part dimension mismatch");
    if (!clip.body.allFinite() || !clip.hand.allFinite() || !audio.frames.allFinite())
        throw std::runtime_error("non-finite data");
}

MotionClip concat_clips(const MotionClip& a, const MotionClip& b,
                        Eigen::Index drop_overlap_frames) {
    if (a.fps != b.fps) throw std::runtime_error("fps mismatch");
    if (drop_overlap_frames < 0 || drop_overlap_frames >= b.frames())
        throw std::runtime_error("overlap too large");
    const Eigen::Index nb = b.frames() - drop_overlap_frames;
    MotionClip out;
    out.fps = a.fps;
    out.body.resize(a.frames() + nb, kBodyDim);
    out.body << a.body, b.body.bottomRows(nb);
    out.hand.resize(a.frames() + nb, kHandDim);
    out.hand << a.hand, b.hand.bottomRows(nb);
    return out;
}

}  // namespace gesture
