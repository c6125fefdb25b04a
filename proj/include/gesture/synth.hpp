#pragma once

#include "gesture/container.hpp"
#include "gesture/types.hpp"

#include <string>
#include <tuple>
#include <vector>

namespace gesture {

// Synthetic audio→motion corpus with a learnable coupling: every joint is a
// sinusoid whose instantaneous amplitude follows the audio energy envelope
// (gain g), phase-shifted per speaker id plus a hidden per-clip offset.
struct SyntheticSpec {
    uint64_t seed = 1;
    int n_clips = 200;       // train split size
    int n_test_clips = 50;   // test split size
    int frames = kWindowFrames;
    int n_id = 4;
    int d_a = 64;
    double gain = 1.0;
    double noise = 0.02;  // per-entry motion jitter, radians
};

struct GeneratedPair {
    AudioFeatures audio;
    MotionClip motion;
    FaceParams face;
    SpeakerId id;
};

// Deterministic given (spec.seed, clip_index).
GeneratedPair gen_pair(const SyntheticSpec& spec, int clip_index, Rng& rng);
GeneratedPair gen_pair(const SyntheticSpec& spec, int clip_index);

struct DatasetClip {
    std::string file;
    std::string split;  // "train" or "test"
    AudioFeatures audio;
    MotionClip motion;
    FaceParams face;
    SpeakerId id;
};

struct Dataset {
    std::vector<DatasetClip> clips;

    std::vector<const DatasetClip*> split(const std::string& name) const {
        std::vector<const DatasetClip*> out;
        for (const auto& c : clips)
            if (c.split == name) out.push_back(&c);
        return out;
    }

    int n_ids() const {
        int n = 0;
        for (const auto& c : clips) n = std::max(n, c.id.value + 1);
        return n;
    }

    int d_audio() const {
        return clips.empty() ? 0 : static_cast<int>(clips.front().audio.dim());
    }
};

// Writes one container per clip plus manifest.txt (filename and split per line).
void write_corpus(const SyntheticSpec& spec, const std::string& dir);

// Loads a directory of clip containers, ordered by filename, each validated.
// Split membership comes from manifest.txt when present, else "train".
Dataset import_external(const std::string& dir);

// Container entries for one clip (audio/body/hand/face/id).
std::vector<TensorEntry> clip_entries(const AudioFeatures& audio, const MotionClip& motion,
                                      const FaceParams& face, SpeakerId id);
DatasetClip clip_from_entries(const std::vector<TensorEntry>& entries);

}  // namespace gesture
