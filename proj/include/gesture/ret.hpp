#pragma once

#include "gesture/nn.hpp"
#include "gesture/types.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gesture {

struct RetConfig {
    int codebook_size = 256;  // V; MASK symbol is V itself
    int n_blocks = 4;         // N
    int d_embed = 64;         // token/audio embedding width d_e
    int d_model = 256;        // ViT width d_v
    int heads = 4;
    int mlp_ratio = 4;
    int n_id = 4;
    int d_audio = 64;
    int tokens = kWindowTokens;

    int mask_symbol() const { return codebook_size; }
};

struct MaskSpec {
    MatI mask;  // [t x 2], 1 = masked
    double ratio = 0.0;
};

// Replaces exactly round(ratio * 2t) grid entries with MASK, chosen
// uniformly without replacement.
inline std::pair<IndexGrid, MaskSpec> mask_indices(const IndexGrid& grid, double ratio,
                                                   int mask_symbol, Rng& rng) {
    const Eigen::Index t = grid.tokens();
    const Eigen::Index total = 2 * t;
    const auto k = static_cast<Eigen::Index>(std::lround(ratio * static_cast<double>(total)));
    std::vector<Eigen::Index> pos(static_cast<size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) pos[static_cast<size_t>(i)] = i;
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index j = i + rng.uniform_int(total - i);
        std::swap(pos[static_cast<size_t>(i)], pos[static_cast<size_t>(j)]);
    }
    IndexGrid masked = grid;
    MaskSpec spec;
    spec.ratio = ratio;
    spec.mask = MatI::Zero(t, 2);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index row = pos[static_cast<size_t>(i)] / 2;
        const Eigen::Index col = pos[static_cast<size_t>(i)] % 2;
        masked.entries(row, col) = mask_symbol;
        spec.mask(row, col) = 1;
    }
    return {std::move(masked), std::move(spec)};
}

// Recurrent embedded transformer: token embeddings with dropout
// regularization, audio encoder, per-channel fusion, ViT core with id and
// positional encoding, and one classification head per channel.
template <typename T>
struct RetNetwork {
    RetConfig cfg;
    nn::ParamStore<T> params;
    nn::Embedding<T> body_embed, hand_embed;  // (V+1) rows, MASK included
    nn::Conv1d<T> audio_conv1, audio_conv2, audio_conv3;
    nn::Linear<T> audio_proj;      // pointwise projection
    nn::Linear<T> fuse_hybrid;     // 2*d_e -> d_e, shared across channels
    nn::Linear<T> fuse_intrinsic;  // d_e -> d_v
    nn::Linear<T> patch_embed;     // both channels -> one token per step
    ad::Var<T> pos_embed;          // [t x d_v]
    nn::Embedding<T> id_embed;
    std::vector<nn::EncoderBlock<T>> blocks;
    nn::LayerNorm<T> final_ln;
    nn::Linear<T> head_body, head_hand;  // d_v -> V, never emit MASK

    RetNetwork() = default;
    RetNetwork(const RetConfig& cfg_, uint64_t seed) : cfg(cfg_) {
        Rng rng(seed);
        const int V = cfg.codebook_size;
        body_embed = nn::Embedding<T>(params, "body_embed", V + 1, cfg.d_embed, rng);
        hand_embed = nn::Embedding<T>(params, "hand_embed", V + 1, cfg.d_embed, rng);
        audio_conv1 = nn::Conv1d<T>(params, "audio_conv1", cfg.d_audio, cfg.d_embed, 3, 1, 1, rng);
        audio_conv2 = nn::Conv1d<T>(params, "audio_conv2", cfg.d_embed, cfg.d_embed, 4, 2, 1, rng);
        audio_conv3 = nn::Conv1d<T>(params, "audio_conv3", cfg.d_embed, cfg.d_embed, 4, 2, 1, rng);
        audio_proj = nn::Linear<T>(params, "audio_proj", cfg.d_embed, cfg.d_embed, rng);
        fuse_hybrid = nn::Linear<T>(params, "fuse_hybrid", 2 * cfg.d_embed, cfg.d_embed, rng);
        fuse_intrinsic = nn::Linear<T>(params, "fuse_intrinsic", cfg.d_embed, cfg.d_model, rng);
        patch_embed = nn::Linear<T>(params, "patch_embed", 2 * cfg.d_model, cfg.d_model, rng);
        pos_embed = params.add("pos_embed", rng.normal_mat<T>(cfg.tokens, cfg.d_model, 0.02));
        id_embed = nn::Embedding<T>(params, "id_embed", cfg.n_id, cfg.d_model, rng);
        for (int i = 0; i < cfg.n_blocks; ++i)
            blocks.emplace_back(params, "block" + std::to_string(i), cfg.d_model, cfg.heads,
                                cfg.mlp_ratio, rng);
        final_ln = nn::LayerNorm<T>(params, "final_ln", cfg.d_model);
        head_body = nn::Linear<T>(params, "head_body", cfg.d_model, V, rng);
        head_hand = nn::Linear<T>(params, "head_hand", cfg.d_model, V, rng);
    }
};

// [4t x d_a] audio frames -> [t x d_e] features.
template <typename T>
ad::Var<T> encode_audio_graph(const RetNetwork<T>& net, const ad::Var<T>& frames, int batch) {
    if ((frames.val().rows() / batch) % kDownsample != 0)
        throw std::runtime_error("frame count not a multiple of 4");
    ad::Var<T> h = ad::relu(net.audio_conv1(frames, batch));
    h = ad::relu(net.audio_conv2(h, batch));
    h = net.audio_conv3(h, batch);
    return net.audio_proj(h);
}

template <typename T>
Mat<T> encode_audio(const RetNetwork<T>& net, const Mat<T>& frames) {
    if (frames.cols() != net.cfg.d_audio) throw std::runtime_error("audio dimension mismatch");
    return encode_audio_graph(net, ad::Var<T>::leaf(frames, false), 1).val();
}

// Token embedding maps before fusion; body and hand stay separate channels.
template <typename T>
std::pair<Mat<T>, Mat<T>> embed_tokens(const RetNetwork<T>& net, const IndexGrid& grid) {
    std::vector<int> body_idx, hand_idx;
    for (Eigen::Index i = 0; i < grid.tokens(); ++i) {
        body_idx.push_back(grid.entries(i, 0));
        hand_idx.push_back(grid.entries(i, 1));
    }
    return {ad::gather_rows(net.body_embed.table, body_idx).val(),
            ad::gather_rows(net.hand_embed.table, hand_idx).val()};
}

template <typename T>
struct RetLogits {
    Mat<T> body, hand;  // [t x V] each
};

// Batched forward over B grids stacked along rows. audio_feat is the
// [B*t x d_e] encoded audio, or absent for the empty condition (zeros,
// no dropout). Dropout runs only in training mode.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> ret_forward_graph(
    const RetNetwork<T>& net, const std::vector<IndexGrid>& grids,
    const std::optional<ad::Var<T>>& audio_feat, const std::vector<SpeakerId>& ids,
    bool training, double der_rate, double audio_drop_rate, Rng* rng) {
    namespace adx = gesture::ad;
    const int B = static_cast<int>(grids.size());
    const int t = net.cfg.tokens;
    const int V = net.cfg.codebook_size;

    std::vector<int> body_idx, hand_idx, id_idx, pos_idx;
    body_idx.reserve(static_cast<size_t>(B) * t);
    for (int b = 0; b < B; ++b) {
        if (ids[static_cast<size_t>(b)].value < 0 || ids[static_cast<size_t>(b)].value >= net.cfg.n_id)
            throw std::runtime_error("id out of range");
        if (grids[static_cast<size_t>(b)].tokens() != t)
            throw std::runtime_error("token count mismatch");
        for (int i = 0; i < t; ++i) {
            const int bi = grids[static_cast<size_t>(b)].entries(i, 0);
            const int hi = grids[static_cast<size_t>(b)].entries(i, 1);
            if (bi < 0 || bi > V || hi < 0 || hi > V)
                throw std::runtime_error("index out of range");
            body_idx.push_back(bi);
            hand_idx.push_back(hi);
            id_idx.push_back(ids[static_cast<size_t>(b)].value);
            pos_idx.push_back(i);
        }
    }

    adx::Var<T> body_map = adx::gather_rows(net.body_embed.table, body_idx);
    adx::Var<T> hand_map = adx::gather_rows(net.hand_embed.table, hand_idx);
    if (training && rng) {
        body_map = nn::dropout(body_map, der_rate, training, *rng);
        hand_map = nn::dropout(hand_map, der_rate, training, *rng);
    }

    adx::Var<T> audio;
    if (audio_feat) {
        audio = *audio_feat;
        if (training && rng) audio = nn::dropout(audio, audio_drop_rate, training, *rng);
    } else {
        audio = adx::Var<T>::leaf(Mat<T>::Zero(B * t, net.cfg.d_embed), false);
    }

    auto fuse = [&](const adx::Var<T>& channel) {
        adx::Var<T> mixed = adx::relu(net.fuse_hybrid(adx::concat_cols(channel, audio)));
        return net.fuse_intrinsic(mixed);
    };
    adx::Var<T> body_feat = fuse(body_map);
    adx::Var<T> hand_feat = fuse(hand_map);

    adx::Var<T> x = net.patch_embed(adx::concat_cols(body_feat, hand_feat));
    x = adx::add(x, adx::gather_rows(net.pos_embed, pos_idx));
    x = adx::add(x, adx::gather_rows(net.id_embed.table, id_idx));
    for (const auto& block : net.blocks) x = block(x, B);
    x = net.final_ln(x);
    return {net.head_body(x), net.head_hand(x)};
}

// Single-sample forward returning plain logits [t x 2 x V].
template <typename T>
RetLogits<T> ret_forward(const RetNetwork<T>& net, const IndexGrid& masked,
                         const std::optional<Mat<T>>& audio_feat, SpeakerId id,
                         bool training = false, double der_rate = 0.0,
                         double audio_drop_rate = 0.0, Rng* rng = nullptr) {
    std::optional<ad::Var<T>> af;
    if (audio_feat) af = ad::Var<T>::leaf(*audio_feat, false);
    auto [body, hand] =
        ret_forward_graph(net, {masked}, af, {id}, training, der_rate, audio_drop_rate, rng);
    if (!body.val().allFinite() || !hand.val().allFinite())
        throw std::runtime_error("non-finite logits");
    return {body.val(), hand.val()};
}

enum class CeScope { all, masked };

// Mean cross-entropy over positions; targets are clean grids (MASK is
// rejected). With CeScope::masked only positions flagged in specs count.
template <typename T>
ad::Var<T> ce_loss_graph(const std::pair<ad::Var<T>, ad::Var<T>>& logits,
                         const std::vector<IndexGrid>& targets, int mask_symbol,
                         CeScope scope = CeScope::all,
                         const std::vector<MaskSpec>* specs = nullptr) {
    const int B = static_cast<int>(targets.size());
    const Eigen::Index t = targets.front().tokens();
    std::vector<int> rows_body, rows_hand, tgt;
    for (int c = 0; c < 2; ++c)
        for (int b = 0; b < B; ++b)
            for (Eigen::Index i = 0; i < t; ++i) {
                const int v = targets[static_cast<size_t>(b)].entries(i, c);
                if (v < 0 || v >= mask_symbol)
                    throw std::runtime_error("target contains MASK");
                if (scope == CeScope::masked &&
                    (*specs)[static_cast<size_t>(b)].mask(i, c) == 0)
                    continue;
                (c == 0 ? rows_body : rows_hand).push_back(static_cast<int>(b * t + i));
                tgt.push_back(v);
            }
    if (tgt.empty()) throw std::runtime_error("no scored positions");
    ad::Var<T> scored_body = ad::gather_rows(logits.first, rows_body);
    ad::Var<T> scored_hand = ad::gather_rows(logits.second, rows_hand);
    const Eigen::Index nb = scored_body.val().rows();
    const Eigen::Index nh = scored_hand.val().rows();
    Mat<T> stacked(nb + nh, scored_body.val().cols());
    stacked.topRows(nb) = scored_body.val();
    stacked.bottomRows(nh) = scored_hand.val();
    auto* pb = scored_body.node().get();
    auto* ph = scored_hand.node().get();
    ad::Var<T> joined = ad::detail::make_op<T>(
        std::move(stacked), {scored_body, scored_hand}, [pb, ph, nb, nh](ad::VarNode<T>& s) {
            ad::detail::accum<T>(*pb, s.grad.topRows(nb));
            ad::detail::accum<T>(*ph, s.grad.bottomRows(nh));
        });
    return ad::ce_loss_mean(joined, tgt);
}

template <typename T>
T ce_loss(const RetLogits<T>& logits, const IndexGrid& target, int mask_symbol) {
    std::pair<ad::Var<T>, ad::Var<T>> lg{ad::Var<T>::leaf(logits.body, false),
                                         ad::Var<T>::leaf(logits.hand, false)};
    return ce_loss_graph(lg, std::vector<IndexGrid>{target}, mask_symbol).val()(0, 0);
}

}  // namespace gesture
