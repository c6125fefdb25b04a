// Command-line surface: corpus synthesis, the three training stages,
// guided generation, metric evaluation, and motion export.
#include <CLI11.hpp>
#include <json.hpp>

#include "gesture/infer.hpp"
#include "gesture/metrics.hpp"
#include "gesture/synth.hpp"
#include "gesture/train.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gesture;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitMissingInput = 2;

int cmd_synth(const std::string& out_dir, int clips, int test_clips, uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_clips = clips;
    spec.n_test_clips = test_clips >= 0 ? test_clips : std::max(1, clips / 4);
    write_corpus(spec, out_dir);
    std::cout << "wrote " << spec.n_clips << " train + " << spec.n_test_clips
              << " test clips to " << out_dir << "\n";
    return kExitOk;
}

void print_report(const TrainReport& report) {
    std::cout << "epochs: " << report.epoch_losses.size() << ", first loss "
              << report.epoch_losses.front() << ", final loss " << report.epoch_losses.back()
              << "\ncheckpoint: " << report.checkpoint_path << "\n";
}

int cmd_train_vq(const std::string& part, const std::string& config_path) {
    TrainConfig cfg = parse_config(config_path);
    const Stage want = part == "body" ? Stage::vq_body : Stage::vq_hand;
    if (cfg.stage != Stage::vq_body && cfg.stage != Stage::vq_hand) cfg.stage = want;
    if (cfg.stage != want)
        throw std::runtime_error("config stage conflicts with --part");
    print_report(train_vq(cfg));
    return kExitOk;
}

int cmd_train_ret(const std::string& config_path) {
    TrainConfig cfg = parse_config(config_path);
    cfg.stage = Stage::ret;
    print_report(train_ret(cfg));
    return kExitOk;
}

int cmd_train_face(const std::string& config_path) {
    TrainConfig cfg = parse_config(config_path);
    cfg.stage = Stage::face;
    print_report(train_face(cfg));
    return kExitOk;
}

GenerationContext read_anchor_file(const std::string& path) {
    auto entries = read_container(path);
    const TensorEntry* pos = find_entry(entries, "positions");
    const TensorEntry* idx = find_entry(entries, "indices");
    if (!pos || !idx) throw std::runtime_error("anchor file needs positions and indices");
    MatI p = pos->as_i32_matrix();
    MatI ix = idx->as_i32_matrix();
    if (p.cols() != 2 || ix.size() != p.rows())
        throw std::runtime_error("anchor positions must be [k x 2] with k indices");
    GenerationContext ctx;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        ctx.pre_filled.push_back({p(i, 0), p(i, 1), ix.data()[i]});
    return ctx;
}

int cmd_generate(const std::string& audio_path, int id, double scale, int max_iters,
                 const std::string& out_path, const std::string& anchor_path,
                 const std::string& ckpt_dir, bool use_ema, double tau0, double tau_min) {
    auto entries = read_container(audio_path);
    const TensorEntry* ae = find_entry(entries, "audio");
    if (!ae) throw std::runtime_error("input has no audio entry");
    AudioFeatures audio{ae->as_f32_matrix()};

    RetNetwork<float> ret = load_ret(checkpoint_file(ckpt_dir, Stage::ret), use_ema);
    VqNetwork<float> vq_body = load_vq(checkpoint_file(ckpt_dir, Stage::vq_body), use_ema);
    VqNetwork<float> vq_hand = load_vq(checkpoint_file(ckpt_dir, Stage::vq_hand), use_ema);
    FaceNetwork<float> face = load_face(checkpoint_file(ckpt_dir, Stage::face), use_ema);

    IriParams p;
    p.max_iters = max_iters;
    p.guidance_scale = scale;
    p.tau0 = tau0;
    p.tau_min = tau_min;

    MotionClip motion;
    if (!anchor_path.empty()) {
        if (audio.frame_count() != kWindowFrames)
            throw std::runtime_error("anchors require a single 88-frame window");
        IriResult res = edit_generate(ret, audio, SpeakerId{id}, p, read_anchor_file(anchor_path));
        motion = decode_grid(vq_body, vq_hand, res.grid);
    } else {
        motion = generate_long(ret, vq_body, vq_hand, audio, SpeakerId{id}, p);
    }
    FaceParams face_out = face_forward(face, audio);

    std::vector<TensorEntry> out = clip_entries(audio, motion, face_out, SpeakerId{id});
    write_container(out_path, out);
    std::cout << "wrote " << motion.frames() << " frames to " << out_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& real_dir, const std::string& gen_dir,
             const std::string& report_path, bool pairwise, double sigma) {
    Dataset real = import_external(real_dir);
    Dataset gen = import_external(gen_dir);
    if (real.clips.size() < 2 || gen.clips.size() < 2)
        throw std::runtime_error("need at least two clips per directory");

    std::vector<const MotionClip*> real_clips, gen_clips;
    for (const auto& c : real.clips) real_clips.push_back(&c.motion);
    for (const auto& c : gen.clips) gen_clips.push_back(&c.motion);

    FeatureExtractor fe = train_feature_extractor(real_clips);
    MatD real_feats = extract_all(fe, real_clips);
    MatD gen_feats = extract_all(fe, gen_clips);

    nlohmann::json j;
    std::ostringstream text;
    auto emit = [&](const std::string& key, double value) {
        text << key << "=" << std::setprecision(10) << value << "\n";
        j[key] = value;
    };

    emit("fgd", fgd(real_feats, gen_feats));
    if (real.clips.size() == gen.clips.size()) emit("mae", mae(real_feats, gen_feats));

    std::vector<MotionClip> gen_motion, real_motion;
    for (const auto& c : gen.clips) gen_motion.push_back(c.motion);
    for (const auto& c : real.clips) real_motion.push_back(c.motion);
    emit("diversity_gen", diversity(gen_motion, pairwise));
    emit("diversity_real", diversity(real_motion, pairwise));

    auto mean_bc = [&](const Dataset& ds) {
        double acc = 0.0;
        int n = 0;
        for (const auto& c : ds.clips) {
            const BeatSet ab = audio_beats(c.audio);
            if (ab.times.empty()) continue;
            acc += beat_consistency(motion_beats(c.motion), ab, sigma);
            ++n;
        }
        return n ? acc / n : 0.0;
    };
    emit("bc_gen", mean_bc(gen));
    emit("bc_real", mean_bc(real));
    emit("n_real", static_cast<double>(real.clips.size()));
    emit("n_gen", static_cast<double>(gen.clips.size()));

    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + report_path);
    out << text.str();
    std::ofstream jout(report_path + ".json", std::ios::trunc);
    jout << j.dump(2) << "\n";
    std::cout << text.str();
    return kExitOk;
}

int cmd_export(const std::string& motion_path, const std::string& format,
               const std::string& out_path) {
    auto entries = read_container(motion_path);
    const TensorEntry* body = find_entry(entries, "body");
    const TensorEntry* hand = find_entry(entries, "hand");
    if (!body || !hand) throw std::runtime_error("input has no body/hand entries");
    MotionClip clip;
    clip.body = body->as_f32_matrix();
    clip.hand = hand->as_f32_matrix();
    const MatF joint = clip.joint();

    std::ostringstream out;
    if (format == "csv") {
        for (Eigen::Index i = 0; i < joint.rows(); ++i) {
            for (Eigen::Index c = 0; c < joint.cols(); ++c) {
                if (c) out << ',';
                out << std::setprecision(9) << joint(i, c);
            }
            out << '\n';
        }
    } else {
        nlohmann::json j;
        j["fps"] = clip.fps;
        j["frames"] = nlohmann::json::array();
        for (Eigen::Index i = 0; i < joint.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < joint.cols(); ++c) row.push_back(joint(i, c));
            j["frames"].push_back(std::move(row));
        }
        out << j.dump() << '\n';
    }

    if (out_path.empty()) {
        std::cout << out.str();
    } else {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << out.str();
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"co-speech gesture generation pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    std::string synth_out;
    int synth_clips = 200, synth_test = -1;
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--clips", synth_clips, "train clip count");
    synth->add_option("--test-clips", synth_test, "test clip count (default clips/4)");
    synth->add_option("--seed", synth_seed, "corpus seed");

    auto* tvq = app.add_subcommand("train-vq", "train one part codebook");
    std::string tvq_part, tvq_config;
    tvq->add_option("--part", tvq_part, "body or hand")
        ->required()
        ->check(CLI::IsMember({"body", "hand"}));
    tvq->add_option("--config", tvq_config, "config file")->required();

    auto* tret = app.add_subcommand("train-ret", "train the gesture generator");
    std::string tret_config;
    tret->add_option("--config", tret_config, "config file")->required();

    auto* tface = app.add_subcommand("train-face", "train the face regressor");
    std::string tface_config;
    tface->add_option("--config", tface_config, "config file")->required();

    auto* gen = app.add_subcommand("generate", "generate motion for an audio container");
    std::string gen_audio, gen_out, gen_anchor, gen_ckpt;
    int gen_id = 0, gen_iters = 10;
    double gen_scale = 2.0, gen_tau0 = 0.9, gen_tau_min = 0.0;
    bool gen_raw = false;
    gen->add_option("--audio", gen_audio, "container with an audio entry")->required();
    gen->add_option("--id", gen_id, "speaker id");
    gen->add_option("--scale", gen_scale, "guidance scale");
    gen->add_option("--max-iters", gen_iters, "reconstruction iterations");
    gen->add_option("--out", gen_out, "output container")->required();
    gen->add_option("--anchor", gen_anchor, "anchor container (positions + indices)");
    gen->add_option("--ckpt", gen_ckpt, "checkpoint directory")->required();
    gen->add_option("--tau0", gen_tau0, "initial confidence threshold");
    gen->add_option("--tau-min", gen_tau_min, "final confidence threshold");
    gen->add_flag("--raw-weights", gen_raw, "use raw instead of EMA weights");

    auto* ev = app.add_subcommand("eval", "metric report for generated vs real clips");
    std::string ev_real, ev_gen, ev_out;
    bool ev_pairwise = false;
    double ev_sigma = 0.1;
    ev->add_option("--real", ev_real, "reference clip directory")->required();
    ev->add_option("--gen", ev_gen, "generated clip directory")->required();
    ev->add_option("--out", ev_out, "report path (key=value; .json twin)")->required();
    ev->add_flag("--pairwise-diversity", ev_pairwise, "pairwise diversity variant");
    ev->add_option("--sigma", ev_sigma, "beat consistency kernel width (s)");

    auto* ex = app.add_subcommand("export", "export motion as csv or json");
    std::string ex_motion, ex_format = "csv", ex_out;
    ex->add_option("--motion", ex_motion, "motion container")->required();
    ex->add_option("--format", ex_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    ex->add_option("--out", ex_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*synth) return cmd_synth(synth_out, synth_clips, synth_test, synth_seed);
        if (*tvq) return cmd_train_vq(tvq_part, tvq_config);
        if (*tret) return cmd_train_ret(tret_config);
        if (*tface) return cmd_train_face(tface_config);
        if (*gen)
            return cmd_generate(gen_audio, gen_id, gen_scale, gen_iters, gen_out, gen_anchor,
                                gen_ckpt, !gen_raw, gen_tau0, gen_tau_min);
        if (*ev) return cmd_eval(ev_real, ev_gen, ev_out, ev_pairwise, ev_sigma);
        if (*ex) return cmd_export(ex_motion, ex_format, ex_out);
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
