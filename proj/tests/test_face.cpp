#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gesture/face.hpp"
#include "gesture/synth.hpp"
#include "testutil.hpp"

using namespace gesture;

TEST_CASE("face_forward splits 103 outputs into jaw and expression") {
    FaceConfig cfg;
    FaceNetwork<float> net(cfg, 3);
    Rng rng(1);
    AudioFeatures audio{rng.normal_mat<float>(88, 64)};
    FaceParams out = face_forward(net, audio);
    CHECK(out.jaw.rows() == 88);
    CHECK(out.jaw.cols() == 3);
    CHECK(out.expression.rows() == 88);
    CHECK(out.expression.cols() == 100);
    CHECK(out.jaw.allFinite());
    CHECK(out.expression.allFinite());

    FaceParams again = face_forward(net, audio);
    CHECK(out.jaw == again.jaw);
    CHECK(out.expression == again.expression);
}

TEST_CASE("face_forward keeps single frames at stride 1") {
    FaceConfig cfg;
    FaceNetwork<float> net(cfg, 4);
    Rng rng(2);
    AudioFeatures audio{rng.normal_mat<float>(1, 64)};
    FaceParams out = face_forward(net, audio);
    CHECK(out.jaw.rows() == 1);
    CHECK(out.expression.rows() == 1);
}

TEST_CASE("face_loss on identical inputs is zero") {
    Rng rng(3);
    FaceParams f{rng.normal_mat<float>(10, 3), rng.normal_mat<float>(10, 100)};
    auto parts = face_loss(f, f);
    CHECK(parts.jaw == 0.0f);
    CHECK(parts.expr == 0.0f);
    CHECK(parts.total == 0.0f);
}

TEST_CASE("face_loss separates L1 jaw and L2 expression terms") {
    Rng rng(4);
    FaceParams gt{rng.normal_mat<float>(10, 3), rng.normal_mat<float>(10, 100)};

    FaceParams jaw_off = gt;
    jaw_off.jaw.array() += 0.5f;
    auto p1 = face_loss(gt, jaw_off);
    CHECK(p1.jaw == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(p1.expr == 0.0f);

    FaceParams expr_off = gt;
    expr_off.expression.array() += 2.0f;
    auto p2 = face_loss(gt, expr_off);
    CHECK(p2.jaw == 0.0f);
    CHECK(p2.expr == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(p2.total == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("face_loss rejects mismatched shapes") {
    Rng rng(5);
    MatD a = rng.normal_mat<double>(8, kFaceDim);
    MatD b = rng.normal_mat<double>(9, kFaceDim);
    CHECK_THROWS_WITH(face_loss(a, b), "shape mismatch");
}

TEST_CASE("face gradients match finite differences on a tiny config") {
    FaceConfig cfg;
    cfg.d_audio = 5;
    cfg.hidden = 6;
    FaceNetwork<double> net(cfg, 2026);
    Rng rng(6);
    MatD audio = rng.normal_mat<double>(8, 5);
    MatD gt = rng.normal_mat<double>(8, kFaceDim);

    auto build = [&] {
        auto pred = face_forward_graph(net, ad::Var<double>::leaf(audio, false), 1);
        return face_loss_graph(ad::Var<double>::leaf(gt, false), pred);
    };
    auto res = testutil::fd_check_params(build, net.params);
    CHECK(res.checked > 500);
    CHECK(res.max_err < 1e-4);
}

TEST_CASE("200 optimizer steps halve the face loss on a 10-pair set") {
    SyntheticSpec spec;
    spec.seed = 31;
    std::vector<MatF> audios, faces;
    for (int i = 0; i < 10; ++i) {
        GeneratedPair p = gen_pair(spec, i);
        audios.push_back(p.audio.frames);
        faces.push_back(p.face.joint());
    }
    MatF audio_all(88 * 10, 64), face_all(88 * 10, kFaceDim);
    for (int i = 0; i < 10; ++i) {
        audio_all.middleRows(88 * i, 88) = audios[static_cast<size_t>(i)];
        face_all.middleRows(88 * i, 88) = faces[static_cast<size_t>(i)];
    }

    FaceConfig cfg;
    FaceNetwork<float> net(cfg, 77);
    nn::Adam<float> opt(3e-4);
    float first = -1, last = -1;
    for (int step = 0; step < 200; ++step) {
        net.params.zero_grad();
        auto pred = face_forward_graph(net, ad::Var<float>::leaf(audio_all, false), 10);
        FaceLossParts<float> parts;
        auto loss = face_loss_graph(ad::Var<float>::leaf(face_all, false), pred, &parts);
        if (step == 0) first = parts.total;
        last = parts.total;
        ad::backward(loss);
        opt.step(net.params);
    }
    CHECK(last < 0.5f * first);
}
