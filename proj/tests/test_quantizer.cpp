#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gesture/vqvae.hpp"
#include "testutil.hpp"

using namespace gesture;

namespace {

// Independent nearest-neighbor oracle: full distance matrix via Eigen
// broadcasting, then a first-minimum scan.
template <typename T>
std::vector<int> nn_oracle(const Mat<T>& table, const Mat<T>& z) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> tn = table.rowwise().squaredNorm();
    std::vector<int> out;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Matrix<T, Eigen::Dynamic, 1> d =
            tn - 2.0 * (table * z.row(i).transpose());
        int best = 0;
        for (Eigen::Index r = 1; r < d.size(); ++r)
            if (d(r) < d(best)) best = static_cast<int>(r);
        out.push_back(best);
    }
    return out;
}

VqNetwork<float> tiny_float_net(BodyPart part) {
    VqConfig cfg;
    cfg.d_part = part_dim(part);
    return VqNetwork<float>(cfg, part, 77);
}

}  // namespace

TEST_CASE("encode maps body and hand windows to 22 latent rows") {
    Rng rng(1);
    auto body_net = tiny_float_net(BodyPart::body);
    MatF z = encode(body_net, rng.normal_mat<float>(88, 63));
    CHECK(z.rows() == 22);
    CHECK(z.cols() == 64);

    auto hand_net = tiny_float_net(BodyPart::hand);
    MatF zh = encode(hand_net, rng.normal_mat<float>(88, 90));
    CHECK(zh.rows() == 22);
    CHECK(zh.cols() == 64);

    MatF z1 = encode(body_net, rng.normal_mat<float>(4, 63));
    CHECK(z1.rows() == 1);

    CHECK_THROWS_WITH(encode(body_net, rng.normal_mat<float>(88, 90)),
                      "part dimension mismatch");
}

TEST_CASE("quantize picks the closest codebook row") {
    MatF table = MatF::Zero(2, 64);
    table.row(1).head(2) << 1.0f, 1.0f;
    MatF z = MatF::Zero(1, 64);
    z.row(0).head(2) << 0.2f, 0.1f;
    // brute force: d0 = 0.04+0.01 = 0.05, d1 = 0.64+0.81 = 1.45
    auto q = quantize(table, z);
    CHECK(q.indices == std::vector<int>{0});
    CHECK(q.codes.row(0) == table.row(0));
}

TEST_CASE("quantize returns an exact row at distance zero") {
    Rng rng(2);
    MatF table = rng.normal_mat<float>(16, 64);
    MatF z = table.row(9);
    auto q = quantize(table, z);
    CHECK(q.indices == std::vector<int>{9});
    CHECK((q.codes.row(0) - z.row(0)).squaredNorm() == 0.0f);
}

TEST_CASE("quantize breaks ties toward the lowest index") {
    MatF table = MatF::Constant(8, 64, 5.0f);
    table.row(3).setZero();
    table.row(7).setZero();
    table(3, 0) = 1.0f;
    table(7, 0) = -1.0f;
    MatF z = MatF::Zero(1, 64);
    auto q = quantize(table, z);
    CHECK(q.indices == std::vector<int>{3});
    CHECK(nn_oracle(table, z) == std::vector<int>{3});
}

TEST_CASE("quantize agrees with the exhaustive oracle on 1000 random rows") {
    Rng rng(3);
    MatF table = rng.normal_mat<float>(256, 64);
    MatF z = rng.normal_mat<float>(1000, 64);
    auto q = quantize(table, z);
    CHECK(q.indices == nn_oracle(table, z));
}

TEST_CASE("decode upsamples four frames per token") {
    Rng rng(4);
    auto net = tiny_float_net(BodyPart::body);
    MatF out = decode(net, rng.normal_mat<float>(22, 64));
    CHECK(out.rows() == 88);
    CHECK(out.cols() == 63);
    CHECK(out.allFinite());
    CHECK(decode(net, rng.normal_mat<float>(1, 64)).rows() == 4);
}

TEST_CASE("decode(encode(x)) keeps the input shape and is bit-deterministic") {
    Rng rng(5);
    auto net = tiny_float_net(BodyPart::hand);
    MatF x = rng.normal_mat<float>(48, 90);
    MatF z1 = encode(net, x);
    MatF z2 = encode(net, x);
    CHECK(z1 == z2);
    MatF y1 = decode(net, z1);
    MatF y2 = decode(net, z2);
    CHECK(y1 == y2);
    CHECK(y1.rows() == x.rows());
    CHECK(y1.cols() == x.cols());
}

TEST_CASE("vq_loss components vanish on a perfect reconstruction") {
    Rng rng(6);
    MatF m = rng.normal_mat<float>(8, 5);
    MatF z = rng.normal_mat<float>(2, 4);
    auto parts = vq_loss(m, m, z, z);
    CHECK(parts.rec == 0.0f);
    CHECK(parts.eq == 0.0f);
    CHECK(parts.vel == 0.0f);
    CHECK(parts.total == 0.0f);
}

TEST_CASE("vq_loss scalar toy reproduces 1.25") {
    MatF m = MatF::Zero(2, 1);
    MatF e = MatF::Constant(1, 1, 1.0f);
    MatF z = MatF::Zero(1, 1);
    auto parts = vq_loss(m, m, z, e);
    CHECK(parts.eq == doctest::Approx(1.25).epsilon(1e-7));
}

TEST_CASE("constant clips have zero velocity loss and offset reconstruction loss") {
    MatF m = MatF::Constant(10, 3, 0.4f);
    MatF mhat = MatF::Constant(10, 3, 1.15f);
    MatF z = MatF::Zero(2, 4);
    auto parts = vq_loss(m, mhat, z, z);
    CHECK(parts.vel == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(parts.rec == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("codebook_lookup returns table rows and rejects the mask symbol") {
    Rng rng(7);
    MatF table = rng.normal_mat<float>(16, 64);
    MatF looked = codebook_lookup(table, std::vector<int>{0, 0, 0});
    for (int i = 0; i < 3; ++i) CHECK(looked.row(i) == table.row(0));

    MatF z = rng.normal_mat<float>(5, 64);
    auto q = quantize(table, z);
    CHECK(codebook_lookup(table, q.indices) == q.codes);

    CHECK_THROWS_WITH(codebook_lookup(table, std::vector<int>{3, 16}), "unresolved index");
}

TEST_CASE("commitment term strictly increases with the latent gap") {
    Rng rng(8);
    MatF m = MatF::Zero(8, 3);
    MatF e = rng.normal_mat<float>(2, 4);
    MatF dir = rng.normal_mat<float>(2, 4);
    float prev = -1.0f;
    for (float alpha : {0.1f, 0.5f, 1.0f, 2.0f, 4.0f}) {
        MatF z = e + alpha * dir;
        auto parts = vq_loss(m, m, z, e);
        CHECK(parts.eq > prev);
        prev = parts.eq;
    }
}

TEST_CASE("vq loss gradients match finite differences on a tiny net") {
    VqConfig cfg;
    cfg.d_part = 5;
    cfg.codebook_size = 4;
    cfg.latent = 4;
    cfg.hidden = 6;
    VqNetwork<double> net(cfg, BodyPart::body, 2024);
    Rng rng(30);
    MatD x = rng.normal_mat<double>(8, 5);

    const VqFrozenPoint<double> fp = vq_freeze_point(net, x, 1);
    auto build = [&] { return vq_surrogate_loss(net, x, 1, fp); };
    auto res = testutil::fd_check_params(build, net.params);
    CHECK(res.checked > 400);
    CHECK(res.max_err < 1e-4);

    // the check is not vacuous: most parameters carry gradient
    net.params.zero_grad();
    ad::backward(build());
    long nonzero = 0, total = 0;
    for (auto& e : net.params.items) {
        total += e.var.val().size();
        if (e.var.grad().size())
            nonzero += (e.var.grad().array().abs() > 0.0).count();
    }
    CHECK(nonzero > total / 2);

    // the surrogate's gradient is the training step's gradient
    net.params.zero_grad();
    ad::backward(vq_training_step(net, x, 1).loss);
    std::vector<MatD> step_grads;
    for (auto& e : net.params.items) step_grads.push_back(e.var.grad());
    net.params.zero_grad();
    ad::backward(build());
    for (size_t i = 0; i < net.params.items.size(); ++i) {
        const MatD& g = net.params.items[i].var.grad();
        CHECK((g - step_grads[i]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("codebook gradient comes only from the 0.25-weighted term") {
    VqConfig cfg;
    cfg.d_part = 5;
    cfg.codebook_size = 4;
    cfg.latent = 4;
    cfg.hidden = 6;
    VqNetwork<double> net(cfg, BodyPart::body, 11);
    Rng rng(31);
    MatD x = rng.normal_mat<double>(8, 5);

    net.params.zero_grad();
    auto step = vq_training_step(net, x, 1);
    ad::backward(step.loss);

    // closed form: d/dE 0.25*mean((E - sg z)^2) scattered over used rows
    MatD z = net.encode_graph(ad::Var<double>::leaf(x, false), 1).val();
    MatD e = codebook_lookup(net.codebook.val(), step.indices);
    MatD expect = MatD::Zero(cfg.codebook_size, cfg.latent);
    const double n = static_cast<double>(e.size());
    for (size_t i = 0; i < step.indices.size(); ++i)
        expect.row(step.indices[i]) +=
            0.25 * 2.0 / n * (e.row(static_cast<Eigen::Index>(i)) - z.row(static_cast<Eigen::Index>(i)));
    CHECK((net.codebook.grad() - expect).cwiseAbs().maxCoeff() < 1e-12);
}
