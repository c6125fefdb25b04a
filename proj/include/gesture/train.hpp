#pragma once

#include "gesture/container.hpp"
#include "gesture/face.hpp"
#include "gesture/ret.hpp"
#include "gesture/synth.hpp"
#include "gesture/vqvae.hpp"

#include <string>
#include <vector>

namespace gesture {

enum class Stage { vq_body, vq_hand, ret, face };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct TrainConfig {
    Stage stage = Stage::vq_body;
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 3e-4;
    uint64_t seed = 1;
    double der_rate = 0.2;
    double audio_drop_rate = 0.1;
    double mask_ratio_min = 0.5;
    double mask_ratio_max = 1.0;
    double ema_decay = 0.98;
    int codebook_size = 256;  // V
    int n_blocks = 4;         // N
    int d_model = 256;        // d_v
    CeScope ce_scope = CeScope::all;
    std::string dataset;
    std::string checkpoint;  // directory holding one file per stage

    void validate() const;
};

// Flat "key: value" text; every key maps to one TrainConfig field and
// unknown keys are errors.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config(const std::string& path);
std::string config_to_text(const TrainConfig& cfg);

// Shadow copy of every trainable parameter: shadow' = d*shadow + (1-d)*params.
template <typename T>
struct EmaState {
    double decay = 0.995;
    std::vector<Mat<T>> shadow;

    static EmaState init(const nn::ParamStore<T>& ps, double decay) {
        EmaState s;
        s.decay = decay;
        for (const auto& e : ps.items) s.shadow.push_back(e.var.val());
        return s;
    }

    void apply_to(nn::ParamStore<T>& ps) const {
        for (size_t i = 0; i < ps.items.size(); ++i) ps.items[i].var.val() = shadow[i];
    }
};

template <typename T>
void ema_update(EmaState<T>& state, const nn::ParamStore<T>& params) {
    if (state.shadow.size() != params.items.size())
        throw std::runtime_error("shape mismatch");
    for (size_t i = 0; i < state.shadow.size(); ++i) {
        const Mat<T>& p = params.items[i].var.val();
        if (state.shadow[i].rows() != p.rows() || state.shadow[i].cols() != p.cols())
            throw std::runtime_error("shape mismatch");
        state.shadow[i] = static_cast<T>(state.decay) * state.shadow[i] +
                          static_cast<T>(1.0 - state.decay) * p;
    }
}

std::string checkpoint_file(const std::string& dir, Stage stage);

struct TrainReport {
    std::vector<float> epoch_losses;
    std::string checkpoint_path;
};

TrainReport train_vq(const TrainConfig& cfg);
TrainReport train_ret(const TrainConfig& cfg);
TrainReport train_face(const TrainConfig& cfg);

VqNetwork<float> load_vq(const std::string& file, bool use_ema = true);
RetNetwork<float> load_ret(const std::string& file, bool use_ema = true);
FaceNetwork<float> load_face(const std::string& file, bool use_ema = true);

// Ground-truth token grid for one clip through frozen part encoders.
IndexGrid encode_grid(const VqNetwork<float>& vq_body, const VqNetwork<float>& vq_hand,
                      const MotionClip& clip);

}  // namespace gesture
