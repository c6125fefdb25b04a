#include "gesture/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace gesture {

namespace {

// Per-corpus constants shared by every clip of one seed. All joints ride a
// common carrier with fixed per-joint phase offsets, so every pose lies on
// one compact (carrier phase x amplitude) manifold that a 256-code book can
// quantize faithfully. Each clip hides two variables from the audio: a
// continuous carrier offset and one of four tempo multipliers. Single poses
// never reveal the tempo; only coherent token sequences do, which is what
// masked iterative decoding has to reconstruct.
inline constexpr int kTempoCount = 2;
inline constexpr double kTempoMultipliers[kTempoCount] = {0.75, 1.5};

struct CorpusParams {
    double omega = 0.0;  // base carrier, rad/s
    std::vector<double> phase, amp, center;  // kPoseDim each
    std::vector<double> audio_mix, audio_freq, audio_phase;
    std::vector<double> jaw_gain, expr_gain;
};

CorpusParams corpus_params(const SyntheticSpec& spec) {
    Rng rng(derive_seed(spec.seed, "corpus"));
    CorpusParams p;
    p.omega = 2.0 * M_PI * rng.uniform(0.9, 1.1);
    p.phase.resize(kPoseDim);
    p.amp.resize(kPoseDim);
    p.center.resize(kPoseDim);
    for (int j = 0; j < kPoseDim; ++j) {
        p.phase[j] = rng.uniform(0.0, 2.0 * M_PI);
        p.amp[j] = rng.uniform(0.5, 1.5);
        p.center[j] = rng.uniform(-0.3, 0.3);
    }
    const int extra = std::max(0, spec.d_a - 1);
    for (int c = 0; c < extra; ++c) {
        p.audio_mix.push_back(rng.uniform(0.3, 1.0));
        p.audio_freq.push_back(rng.uniform(1.0, 8.0));
        p.audio_phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
    for (int k = 0; k < kJawDim; ++k) p.jaw_gain.push_back(rng.uniform(0.5, 1.5));
    for (int k = 0; k < kExprDim; ++k) p.expr_gain.push_back(rng.uniform(-1.0, 1.0));
    return p;
}

std::vector<double> lowpass(const std::vector<double>& x, int half_window) {
    const int n = static_cast<int>(x.size());
    std::vector<double> y(x.size());
    for (int i = 0; i < n; ++i) {
        double s = 0;
        int cnt = 0;
        for (int k = -half_window; k <= half_window; ++k) {
            const int j = std::clamp(i + k, 0, n - 1);
            s += x[static_cast<size_t>(j)];
            ++cnt;
        }
        y[static_cast<size_t>(i)] = s / cnt;
    }
    return y;
}

}  // namespace

GeneratedPair gen_pair(const SyntheticSpec& spec, int clip_index, Rng& rng) {
    const CorpusParams cp = corpus_params(spec);
    const int T = spec.frames;

    // smooth random energy envelope in (0, 1]
    double a[3], f[3], ph[3], asum = 0;
    for (int k = 0; k < 3; ++k) {
        a[k] = rng.uniform(0.2, 1.0);
        f[k] = rng.uniform(0.75, 2.5);
        ph[k] = rng.uniform(0.0, 2.0 * M_PI);
        asum += a[k];
    }
    // per-clip energy level: sustained loudness differences across clips,
    // always observable through the audio
    const double level = rng.uniform(0.35, 1.0);
    std::vector<double> env(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i) {
        double s = 0;
        for (int k = 0; k < 3; ++k)
            s += a[k] * std::sin(2.0 * M_PI * f[k] * i / T + ph[k]);
        env[static_cast<size_t>(i)] = level * (0.55 + 0.45 * (s / asum));
    }

    // hidden per-clip variables: a continuous carrier offset (every window
    // start phase occurs in training) and one of four tempo multipliers
    const double carrier_offset = rng.uniform(0.0, 2.0 * M_PI);
    const int tempo = static_cast<int>(rng.uniform_int(kTempoCount));
    const int id = clip_index % spec.n_id;
    const double psi = 2.0 * M_PI * id / spec.n_id;

    GeneratedPair out;
    out.id.value = id;

    out.audio.frames.resize(T, spec.d_a);
    for (int i = 0; i < T; ++i) {
        out.audio.frames(i, 0) = static_cast<float>(env[static_cast<size_t>(i)]);
        for (int c = 1; c < spec.d_a; ++c) {
            const double tone =
                0.15 * std::sin(2.0 * M_PI * cp.audio_freq[static_cast<size_t>(c - 1)] * i / T +
                                cp.audio_phase[static_cast<size_t>(c - 1)]);
            out.audio.frames(i, c) = static_cast<float>(
                cp.audio_mix[static_cast<size_t>(c - 1)] * env[static_cast<size_t>(i)] + tone +
                0.01 * rng.normal());
        }
    }

    MatF joint(T, kPoseDim);
    const double omega = cp.omega * kTempoMultipliers[tempo];
    for (int i = 0; i < T; ++i) {
        const double theta = omega * static_cast<double>(i) / kDefaultFps + psi + carrier_offset;
        for (int j = 0; j < kPoseDim; ++j) {
            const double wave = std::sin(theta + cp.phase[static_cast<size_t>(j)]);
            joint(i, j) = static_cast<float>(cp.center[static_cast<size_t>(j)] +
                                             spec.gain * cp.amp[static_cast<size_t>(j)] *
                                                 env[static_cast<size_t>(i)] * wave +
                                             spec.noise * rng.normal());
        }
    }
    out.motion = MotionClip::from_joint(joint);

    const std::vector<double> lp = lowpass(env, 4);
    out.face.jaw.resize(T, kJawDim);
    out.face.expression.resize(T, kExprDim);
    for (int i = 0; i < T; ++i) {
        for (int k = 0; k < kJawDim; ++k)
            out.face.jaw(i, k) = static_cast<float>(cp.jaw_gain[static_cast<size_t>(k)] *
                                                    env[static_cast<size_t>(i)]);
        for (int k = 0; k < kExprDim; ++k)
            out.face.expression(i, k) = static_cast<float>(cp.expr_gain[static_cast<size_t>(k)] *
                                                           lp[static_cast<size_t>(i)]);
    }
    return out;
}

GeneratedPair gen_pair(const SyntheticSpec& spec, int clip_index) {
    Rng rng(derive_seed(spec.seed, "clip/" + std::to_string(clip_index)));
    return gen_pair(spec, clip_index, rng);
}

std::vector<TensorEntry> clip_entries(const AudioFeatures& audio, const MotionClip& motion,
                                      const FaceParams& face, SpeakerId id) {
    std::vector<TensorEntry> e;
    e.push_back(TensorEntry::from_f32("audio", audio.frames));
    e.push_back(TensorEntry::from_f32("body", motion.body));
    e.push_back(TensorEntry::from_f32("hand", motion.hand));
    e.push_back(TensorEntry::from_f32("face", face.joint()));
    e.push_back(TensorEntry::scalar_i32("id", id.value));
    return e;
}

DatasetClip clip_from_entries(const std::vector<TensorEntry>& entries) {
    DatasetClip c;
    for (const char* name : {"audio", "body", "hand", "face", "id"})
        if (!find_entry(entries, name)) throw std::runtime_error("incomplete clip");
    c.audio.frames = find_entry(entries, "audio")->as_f32_matrix();
    c.motion.body = find_entry(entries, "body")->as_f32_matrix();
    c.motion.hand = find_entry(entries, "hand")->as_f32_matrix();
    c.face = FaceParams::from_joint(find_entry(entries, "face")->as_f32_matrix());
    c.id.value = find_entry(entries, "id")->i32.at(0);
    return c;
}

void write_corpus(const SyntheticSpec& spec, const std::string& dir) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    const int total = spec.n_clips + spec.n_test_clips;
    for (int i = 0; i < total; ++i) {
        const GeneratedPair p = gen_pair(spec, i);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.rcm", i);
        write_container((fs::path(dir) / name).string(),
                        clip_entries(p.audio, p.motion, p.face, p.id));
        manifest << name << ' ' << (i < spec.n_clips ? "train" : "test") << '\n';
    }
    std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::trunc);
    mf << manifest.str();
    if (!mf) throw std::runtime_error("write failed: manifest.txt");
}

Dataset import_external(const std::string& dir) {
    if (!fs::is_directory(dir)) throw MissingInput("no such dataset directory: " + dir);

    std::map<std::string, std::string> split_of;
    const fs::path manifest = fs::path(dir) / "manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream mf(manifest);
        std::string file, split;
        while (mf >> file >> split) split_of[file] = split;
    }

    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".rcm")
            files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());

    Dataset ds;
    for (const auto& f : files) {
        DatasetClip c = clip_from_entries(read_container((fs::path(dir) / f).string()));
        c.file = f;
        const auto it = split_of.find(f);
        c.split = it == split_of.end() ? "train" : it->second;
        validate_pair(c.motion, c.audio);
        if (c.face.frames() != c.motion.frames())
            throw std::runtime_error("frame misalignment");
        ds.clips.push_back(std::move(c));
    }
    return ds;
}

}  // namespace gesture
