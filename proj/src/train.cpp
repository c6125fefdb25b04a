#include "gesture/train.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace gesture {

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::vq_body: return "vq-body";
        case Stage::vq_hand: return "vq-hand";
        case Stage::ret: return "ret";
        case Stage::face: return "face";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    if (name == "vq-body") return Stage::vq_body;
    if (name == "vq-hand") return Stage::vq_hand;
    if (name == "ret") return Stage::ret;
    if (name == "face") return Stage::face;
    throw std::runtime_error("unknown stage: " + name);
}

void TrainConfig::validate() const {
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (epochs <= 0 || batch_size <= 0 || codebook_size < 2 || n_blocks <= 0 || d_model <= 0)
        throw std::runtime_error("counts must be positive");
    if (learning_rate <= 0.0) throw std::runtime_error("learning rate must be positive");
    if (!rate_ok(der_rate) || !rate_ok(audio_drop_rate) || !rate_ok(ema_decay) ||
        !rate_ok(mask_ratio_min) || !rate_ok(mask_ratio_max) ||
        mask_ratio_min > mask_ratio_max)
        throw std::runtime_error("rates must lie in [0,1]");
    if (dataset.empty() || checkpoint.empty())
        throw std::runtime_error("dataset and checkpoint paths are required");
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key: value");
        const std::string key = trim(line.substr(0, colon));
        const std::string value = trim(line.substr(colon + 1));

        try {
            if (key == "stage") cfg.stage = stage_from_name(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "der_rate") cfg.der_rate = std::stod(value);
            else if (key == "audio_drop_rate") cfg.audio_drop_rate = std::stod(value);
            else if (key == "mask_ratio_range") {
                std::istringstream pair(value);
                if (!(pair >> cfg.mask_ratio_min >> cfg.mask_ratio_max))
                    throw std::runtime_error("mask_ratio_range needs two numbers");
            } else if (key == "ema_decay") cfg.ema_decay = std::stod(value);
            else if (key == "V") cfg.codebook_size = std::stoi(value);
            else if (key == "N") cfg.n_blocks = std::stoi(value);
            else if (key == "d_v") cfg.d_model = std::stoi(value);
            else if (key == "ce_loss_scope") {
                if (value == "all") cfg.ce_scope = CeScope::all;
                else if (value == "masked") cfg.ce_scope = CeScope::masked;
                else throw std::runtime_error("ce_loss_scope must be all or masked");
            } else if (key == "dataset") cfg.dataset = value;
            else if (key == "checkpoint") cfg.checkpoint = value;
            else throw std::runtime_error("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingInput("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "stage: " << stage_name(cfg.stage) << '\n'
        << "epochs: " << cfg.epochs << '\n'
        << "batch_size: " << cfg.batch_size << '\n'
        << "learning_rate: " << cfg.learning_rate << '\n'
        << "seed: " << cfg.seed << '\n'
        << "der_rate: " << cfg.der_rate << '\n'
        << "audio_drop_rate: " << cfg.audio_drop_rate << '\n'
        << "mask_ratio_range: " << cfg.mask_ratio_min << ' ' << cfg.mask_ratio_max << '\n'
        << "ema_decay: " << cfg.ema_decay << '\n'
        << "V: " << cfg.codebook_size << '\n'
        << "N: " << cfg.n_blocks << '\n'
        << "d_v: " << cfg.d_model << '\n'
        << "ce_loss_scope: " << (cfg.ce_scope == CeScope::all ? "all" : "masked") << '\n'
        << "dataset: " << cfg.dataset << '\n'
        << "checkpoint: " << cfg.checkpoint << '\n';
    return out.str();
}

std::string checkpoint_file(const std::string& dir, Stage stage) {
    std::string name;
    switch (stage) {
        case Stage::vq_body: name = "vq_body.rcm"; break;
        case Stage::vq_hand: name = "vq_hand.rcm"; break;
        case Stage::ret: name = "ret.rcm"; break;
        case Stage::face: name = "face.rcm"; break;
    }
    return (fs::path(dir) / name).string();
}

namespace {

void push_params(std::vector<TensorEntry>& entries, const nn::ParamStore<float>& ps,
                 const EmaState<float>& ema) {
    for (const auto& e : ps.items)
        entries.push_back(TensorEntry::from_f32("param/" + e.name, e.var.val()));
    for (size_t i = 0; i < ps.items.size(); ++i)
        entries.push_back(TensorEntry::from_f32("ema/" + ps.items[i].name, ema.shadow[i]));
}

void load_params(const std::vector<TensorEntry>& entries, nn::ParamStore<float>& ps,
                 bool use_ema) {
    const std::string prefix = use_ema ? "ema/" : "param/";
    for (auto& e : ps.items) {
        const TensorEntry* te = find_entry(entries, prefix + e.name);
        if (!te) throw std::runtime_error("checkpoint missing parameter: " + e.name);
        MatF m = te->as_f32_matrix();
        if (m.rows() != e.var.val().rows() || m.cols() != e.var.val().cols())
            throw std::runtime_error("checkpoint shape mismatch: " + e.name);
        e.var.val() = m;
    }
}

int arch_i32(const std::vector<TensorEntry>& entries, const std::string& key) {
    const TensorEntry* te = find_entry(entries, "arch/" + key);
    if (!te || te->i32.empty()) throw std::runtime_error("checkpoint missing arch/" + key);
    return te->i32[0];
}

struct TrainSet {
    Dataset ds;
    std::vector<const DatasetClip*> clips;  // train split, pointing into ds
    int n_ids = 0;
    int d_audio = 0;
};

TrainSet load_train_split(const TrainConfig& cfg) {
    TrainSet ts;
    ts.ds = import_external(cfg.dataset);
    // ids are counted over the full set; splits stay balanced over ids
    ts.n_ids = ts.ds.n_ids();
    ts.d_audio = ts.ds.d_audio();
    ts.clips = ts.ds.split("train");
    if (ts.clips.empty()) throw std::runtime_error("dataset has no train split");
    for (const auto* c : ts.clips)
        if (c->motion.frames() != kWindowFrames)
            throw std::runtime_error("training clips must be 88 frames");
    return ts;
}

std::vector<size_t> epoch_order(size_t n, Rng& rng) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
    return order;
}

}  // namespace

TrainReport train_vq(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::vq_body && cfg.stage != Stage::vq_hand)
        throw std::runtime_error("train_vq requires a vq stage");
    TrainSet ts = load_train_split(cfg);
    const BodyPart part = cfg.stage == Stage::vq_body ? BodyPart::body : BodyPart::hand;

    VqConfig vcfg;
    vcfg.d_part = part_dim(part);
    vcfg.codebook_size = cfg.codebook_size;
    VqNetwork<float> net(vcfg, part, derive_seed(cfg.seed, stage_name(cfg.stage)));

    nn::Adam<float> opt(cfg.learning_rate);
    EmaState<float> ema = EmaState<float>::init(net.params, cfg.ema_decay);
    Rng order_rng(derive_seed(cfg.seed, std::string(stage_name(cfg.stage)) + "/order"));

    // Encoder/decoder warm up without quantization first; the codebook is
    // then seeded from the settled latent distribution. Cold codebooks
    // collapse to a handful of codes under the full-weight commitment term.
    const int warmup_epochs = std::max(1, std::min(5, cfg.epochs / 4));

    auto seed_codebook = [&]() {
        const int warm = std::min<int>(static_cast<int>(ts.clips.size()), 32);
        MatF x(warm * kWindowFrames, vcfg.d_part);
        for (int j = 0; j < warm; ++j) {
            const MotionClip& m = ts.clips[static_cast<size_t>(j)]->motion;
            x.middleRows(j * kWindowFrames, kWindowFrames) =
                part == BodyPart::body ? m.body : m.hand;
        }
        MatF z = net.encode_graph(ad::Var<float>::leaf(x, false), warm).val();
        Rng init_rng(derive_seed(cfg.seed, std::string(stage_name(cfg.stage)) + "/codebook-init"));
        std::vector<Eigen::Index> pool(static_cast<size_t>(z.rows()));
        for (Eigen::Index i = 0; i < z.rows(); ++i) pool[static_cast<size_t>(i)] = i;
        for (Eigen::Index r = 0; r < net.codebook.val().rows(); ++r) {
            const Eigen::Index remaining = z.rows() - (r % z.rows());
            const Eigen::Index pick = (r % z.rows()) + init_rng.uniform_int(remaining);
            std::swap(pool[static_cast<size_t>(r % z.rows())], pool[static_cast<size_t>(pick)]);
            net.codebook.val().row(r) = z.row(pool[static_cast<size_t>(r % z.rows())]);
            if (r >= z.rows())  // more codes than samples: jitter the reuse
                net.codebook.val().row(r) +=
                    0.01f * init_rng.normal_mat<float>(1, z.cols()).row(0);
        }
    };

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch == warmup_epochs) seed_codebook();
        const bool quantized = epoch >= warmup_epochs;
        const auto order = epoch_order(ts.clips.size(), order_rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            const int b = static_cast<int>(end - begin);
            MatF x(b * kWindowFrames, vcfg.d_part);
            for (int j = 0; j < b; ++j) {
                const MotionClip& m = ts.clips[order[begin + static_cast<size_t>(j)]]->motion;
                x.middleRows(j * kWindowFrames, kWindowFrames) =
                    part == BodyPart::body ? m.body : m.hand;
            }
            net.params.zero_grad();
            if (quantized) {
                auto step = vq_training_step(net, x, b);
                epoch_loss += step.parts.total;
                ad::backward(step.loss);
            } else {
                ad::Var<float> m = ad::Var<float>::leaf(x, false);
                ad::Var<float> z = net.encode_graph(m, b);
                ad::Var<float> recon = net.decode_graph(z, b);
                ad::Var<float> rec = ad::mae_loss(m, recon);
                ad::Var<float> vel = ad::mean_all(
                    ad::abs(ad::sub(ad::rowdiff(m, b), ad::rowdiff(recon, b))));
                ad::Var<float> loss = ad::add(rec, vel);
                epoch_loss += loss.val()(0, 0);
                ad::backward(loss);
            }
            ++batches;
            opt.step(net.params);
            ema_update(ema, net.params);
        }
        report.epoch_losses.push_back(static_cast<float>(epoch_loss / batches));
    }

    fs::create_directories(cfg.checkpoint);
    std::vector<TensorEntry> entries;
    entries.push_back(TensorEntry::scalar_i32("arch/stage", static_cast<int>(cfg.stage)));
    entries.push_back(TensorEntry::scalar_i32("arch/d_part", vcfg.d_part));
    entries.push_back(TensorEntry::scalar_i32("arch/V", vcfg.codebook_size));
    entries.push_back(TensorEntry::scalar_i32("arch/latent", vcfg.latent));
    entries.push_back(TensorEntry::scalar_i32("arch/hidden", vcfg.hidden));
    push_params(entries, net.params, ema);
    entries.push_back(TensorEntry::scalar_f32("meta/final_loss", report.epoch_losses.back()));
    entries.push_back(TensorEntry::from_text("config/text", config_to_text(cfg)));
    report.checkpoint_path = checkpoint_file(cfg.checkpoint, cfg.stage);
    write_container(report.checkpoint_path, entries);
    return report;
}

VqNetwork<float> load_vq(const std::string& file, bool use_ema) {
    if (!fs::exists(file)) throw MissingInput("stage order violation: missing " + file);
    auto entries = read_container(file);
    VqConfig vcfg;
    vcfg.d_part = arch_i32(entries, "d_part");
    vcfg.codebook_size = arch_i32(entries, "V");
    vcfg.latent = arch_i32(entries, "latent");
    vcfg.hidden = arch_i32(entries, "hidden");
    const BodyPart part = vcfg.d_part == kBodyDim ? BodyPart::body : BodyPart::hand;
    VqNetwork<float> net(vcfg, part, 0);
    load_params(entries, net.params, use_ema);
    return net;
}

IndexGrid encode_grid(const VqNetwork<float>& vq_body, const VqNetwork<float>& vq_hand,
                      const MotionClip& clip) {
    const auto qb = quantize(vq_body.codebook.val(), encode(vq_body, clip.body));
    const auto qh = quantize(vq_hand.codebook.val(), encode(vq_hand, clip.hand));
    IndexGrid g;
    g.entries.resize(static_cast<Eigen::Index>(qb.indices.size()), 2);
    for (size_t i = 0; i < qb.indices.size(); ++i) {
        g.entries(static_cast<Eigen::Index>(i), 0) = qb.indices[i];
        g.entries(static_cast<Eigen::Index>(i), 1) = qh.indices[i];
    }
    return g;
}

TrainReport train_ret(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::ret) throw std::runtime_error("train_ret requires stage ret");
    TrainSet ts = load_train_split(cfg);

    VqNetwork<float> vq_body = load_vq(checkpoint_file(cfg.checkpoint, Stage::vq_body));
    VqNetwork<float> vq_hand = load_vq(checkpoint_file(cfg.checkpoint, Stage::vq_hand));
    if (vq_body.cfg.codebook_size != cfg.codebook_size ||
        vq_hand.cfg.codebook_size != cfg.codebook_size)
        throw std::runtime_error("codebook size differs from the vq checkpoints");

    // ground-truth grids through the frozen encoders, once
    std::vector<IndexGrid> grids;
    grids.reserve(ts.clips.size());
    for (const auto* c : ts.clips) grids.push_back(encode_grid(vq_body, vq_hand, c->motion));

    RetConfig rcfg;
    rcfg.codebook_size = cfg.codebook_size;
    rcfg.n_blocks = cfg.n_blocks;
    rcfg.d_model = cfg.d_model;
    rcfg.n_id = ts.n_ids;
    rcfg.d_audio = ts.d_audio;
    RetNetwork<float> net(rcfg, derive_seed(cfg.seed, "ret"));
    nn::Adam<float> opt(cfg.learning_rate);
    EmaState<float> ema = EmaState<float>::init(net.params, cfg.ema_decay);
    Rng order_rng(derive_seed(cfg.seed, "ret/order"));
    Rng mask_rng(derive_seed(cfg.seed, "ret/mask"));
    Rng drop_rng(derive_seed(cfg.seed, "ret/dropout"));

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(ts.clips.size(), order_rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            const int b = static_cast<int>(end - begin);
            const double ratio = mask_rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);

            std::vector<IndexGrid> clean, masked;
            std::vector<MaskSpec> specs;
            std::vector<SpeakerId> ids;
            MatF audio(b * kWindowFrames, rcfg.d_audio);
            for (int j = 0; j < b; ++j) {
                const size_t ci = order[begin + static_cast<size_t>(j)];
                clean.push_back(grids[ci]);
                auto [mg, spec] = mask_indices(grids[ci], ratio, rcfg.mask_symbol(), mask_rng);
                masked.push_back(std::move(mg));
                specs.push_back(std::move(spec));
                ids.push_back(ts.clips[ci]->id);
                audio.middleRows(j * kWindowFrames, kWindowFrames) = ts.clips[ci]->audio.frames;
            }

            net.params.zero_grad();
            auto feat = encode_audio_graph(net, ad::Var<float>::leaf(audio, false), b);
            auto logits = ret_forward_graph(net, masked, std::optional<ad::Var<float>>(feat), ids,
                                            true, cfg.der_rate, cfg.audio_drop_rate, &drop_rng);
            auto loss = ce_loss_graph(logits, clean, rcfg.mask_symbol(), cfg.ce_scope, &specs);
            epoch_loss += loss.val()(0, 0);
            ++batches;
            ad::backward(loss);
            opt.step(net.params);
            ema_update(ema, net.params);
        }
        report.epoch_losses.push_back(static_cast<float>(epoch_loss / batches));
    }

    fs::create_directories(cfg.checkpoint);
    std::vector<TensorEntry> entries;
    entries.push_back(TensorEntry::scalar_i32("arch/stage", static_cast<int>(Stage::ret)));
    entries.push_back(TensorEntry::scalar_i32("arch/V", rcfg.codebook_size));
    entries.push_back(TensorEntry::scalar_i32("arch/N", rcfg.n_blocks));
    entries.push_back(TensorEntry::scalar_i32("arch/d_e", rcfg.d_embed));
    entries.push_back(TensorEntry::scalar_i32("arch/d_v", rcfg.d_model));
    entries.push_back(TensorEntry::scalar_i32("arch/heads", rcfg.heads));
    entries.push_back(TensorEntry::scalar_i32("arch/mlp_ratio", rcfg.mlp_ratio));
    entries.push_back(TensorEntry::scalar_i32("arch/n_id", rcfg.n_id));
    entries.push_back(TensorEntry::scalar_i32("arch/d_a", rcfg.d_audio));
    entries.push_back(TensorEntry::scalar_i32("arch/tokens", rcfg.tokens));
    push_params(entries, net.params, ema);
    entries.push_back(TensorEntry::scalar_f32("meta/final_loss", report.epoch_losses.back()));
    entries.push_back(TensorEntry::from_text("config/text", config_to_text(cfg)));
    report.checkpoint_path = checkpoint_file(cfg.checkpoint, Stage::ret);
    write_container(report.checkpoint_path, entries);
    return report;
}

RetNetwork<float> load_ret(const std::string& file, bool use_ema) {
    if (!fs::exists(file)) throw MissingInput("stage order violation: missing " + file);
    auto entries = read_container(file);
    RetConfig rcfg;
    rcfg.codebook_size = arch_i32(entries, "V");
    rcfg.n_blocks = arch_i32(entries, "N");
    rcfg.d_embed = arch_i32(entries, "d_e");
    rcfg.d_model = arch_i32(entries, "d_v");
    rcfg.heads = arch_i32(entries, "heads");
    rcfg.mlp_ratio = arch_i32(entries, "mlp_ratio");
    rcfg.n_id = arch_i32(entries, "n_id");
    rcfg.d_audio = arch_i32(entries, "d_a");
    rcfg.tokens = arch_i32(entries, "tokens");
    RetNetwork<float> net(rcfg, 0);
    load_params(entries, net.params, use_ema);
    return net;
}

TrainReport train_face(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::face) throw std::runtime_error("train_face requires stage face");
    TrainSet ts = load_train_split(cfg);

    FaceConfig fcfg;
    fcfg.d_audio = ts.d_audio;
    FaceNetwork<float> net(fcfg, derive_seed(cfg.seed, "face"));
    nn::Adam<float> opt(cfg.learning_rate);
    EmaState<float> ema = EmaState<float>::init(net.params, cfg.ema_decay);
    Rng order_rng(derive_seed(cfg.seed, "face/order"));

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(ts.clips.size(), order_rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            const int b = static_cast<int>(end - begin);
            MatF audio(b * kWindowFrames, fcfg.d_audio);
            MatF face(b * kWindowFrames, kFaceDim);
            for (int j = 0; j < b; ++j) {
                const auto* c = ts.clips[order[begin + static_cast<size_t>(j)]];
                audio.middleRows(j * kWindowFrames, kWindowFrames) = c->audio.frames;
                face.middleRows(j * kWindowFrames, kWindowFrames) = c->face.joint();
            }
            net.params.zero_grad();
            auto pred = face_forward_graph(net, ad::Var<float>::leaf(audio, false), b);
            FaceLossParts<float> parts;
            auto loss = face_loss_graph(ad::Var<float>::leaf(face, false), pred, &parts);
            epoch_loss += parts.total;
            ++batches;
            ad::backward(loss);
            opt.step(net.params);
            ema_update(ema, net.params);
        }
        report.epoch_losses.push_back(static_cast<float>(epoch_loss / batches));
    }

    fs::create_directories(cfg.checkpoint);
    std::vector<TensorEntry> entries;
    entries.push_back(TensorEntry::scalar_i32("arch/stage", static_cast<int>(Stage::face)));
    entries.push_back(TensorEntry::scalar_i32("arch/d_a", fcfg.d_audio));
    entries.push_back(TensorEntry::scalar_i32("arch/hidden", fcfg.hidden));
    push_params(entries, net.params, ema);
    entries.push_back(TensorEntry::scalar_f32("meta/final_loss", report.epoch_losses.back()));
    entries.push_back(TensorEntry::from_text("config/text", config_to_text(cfg)));
    report.checkpoint_path = checkpoint_file(cfg.checkpoint, Stage::face);
    write_container(report.checkpoint_path, entries);
    return report;
}

FaceNetwork<float> load_face(const std::string& file, bool use_ema) {
    if (!fs::exists(file)) throw MissingInput("stage order violation: missing " + file);
    auto entries = read_container(file);
    FaceConfig fcfg;
    fcfg.d_audio = arch_i32(entries, "d_a");
    fcfg.hidden = arch_i32(entries, "hidden");
    FaceNetwork<float> net(fcfg, 0);
    load_params(entries, net.params, use_ema);
    return net;
}

}  // namespace gesture
