#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gesture/autodiff.hpp"
#include "gesture/nn.hpp"
#include "testutil.hpp"

using namespace gesture;
using ad::Var;
using testutil::fd_check;

namespace {

Var<double> randleaf(Rng& rng, int r, int c) {
    return Var<double>::leaf(rng.normal_mat<double>(r, c), true);
}

// Project op output to a scalar through a fixed random weighting, so the
// whole jacobian is exercised.
Var<double> project(const Var<double>& y, Rng& rng) {
    static thread_local MatD w;
    if (w.rows() != y.val().rows() || w.cols() != y.val().cols())
        w = rng.normal_mat<double>(y.val().rows(), y.val().cols());
    return ad::mean_all(ad::cmul(y, Var<double>::leaf(w, false)));
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(11);
    auto a = randleaf(rng, 4, 5);
    auto b = randleaf(rng, 4, 5);
    MatD w = rng.normal_mat<double>(4, 5);
    auto wrap = [&](const Var<double>& y) {
        return ad::mean_all(ad::cmul(y, Var<double>::leaf(w, false)));
    };

    auto check = [&](const std::function<Var<double>()>& build) {
        auto res = fd_check(build, {a, b});
        CHECK(res.max_err < 1e-6);
    };
    check([&] { return wrap(ad::add(a, b)); });
    check([&] { return wrap(ad::sub(a, b)); });
    check([&] { return wrap(ad::cmul(a, b)); });
    check([&] { return wrap(ad::scale(a, 2.5)); });
    check([&] { return wrap(ad::relu(a)); });
    check([&] { return wrap(ad::gelu(a)); });
    check([&] { return wrap(ad::abs(a)); });
    check([&] { return ad::mean_all(ad::cmul(a, b)); });
}

TEST_CASE("matmul and broadcast bias") {
    Rng rng(12);
    auto a = randleaf(rng, 4, 6);
    auto b = randleaf(rng, 6, 3);
    auto bias = randleaf(rng, 1, 3);
    MatD w = rng.normal_mat<double>(4, 3);
    auto build = [&] {
        auto y = ad::add_rowvec(ad::matmul(a, b), bias);
        return ad::mean_all(ad::cmul(y, Var<double>::leaf(w, false)));
    };
    auto res = fd_check(build, {a, b, bias});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("shared subexpression accumulates both paths") {
    Rng rng(13);
    auto a = randleaf(rng, 3, 3);
    auto build = [&] { return ad::mean_all(ad::add(ad::cmul(a, a), ad::scale(a, 3.0))); };
    auto res = fd_check(build, {a});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("stopgrad blocks the gradient path") {
    Rng rng(14);
    auto a = randleaf(rng, 3, 3);
    auto loss = ad::mean_all(ad::cmul(ad::stopgrad(a), a));
    ad::backward(loss);
    // d/da of sg(a)*a is sg(a), not 2a
    MatD expect = a.val() / 9.0;
    CHECK((a.grad() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("concat and slice") {
    Rng rng(15);
    auto a = randleaf(rng, 4, 3);
    auto b = randleaf(rng, 4, 2);
    MatD w = rng.normal_mat<double>(4, 5);
    auto build = [&] {
        auto y = ad::concat_cols(a, b);
        auto z = ad::concat_cols(ad::slice_cols(y, 1, 2), ad::slice_cols(y, 0, 3));
        return ad::mean_all(ad::cmul(z, Var<double>::leaf(w, false)));
    };
    auto res = fd_check(build, {a, b});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("gather rows scatters gradient to table rows") {
    Rng rng(16);
    auto table = randleaf(rng, 5, 4);
    std::vector<int> idx = {0, 2, 2, 4, 1};
    MatD w = rng.normal_mat<double>(5, 4);
    auto build = [&] {
        return ad::mean_all(ad::cmul(ad::gather_rows(table, idx), Var<double>::leaf(w, false)));
    };
    auto res = fd_check(build, {table});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("rowdiff over batched samples") {
    Rng rng(17);
    auto x = randleaf(rng, 12, 3);  // 2 samples of length 6
    MatD w = rng.normal_mat<double>(10, 3);
    auto build = [&] {
        return ad::mean_all(ad::cmul(ad::rowdiff(x, 2), Var<double>::leaf(w, false)));
    };
    auto res = fd_check(build, {x});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("conv1d stride 1 and stride 2") {
    Rng rng(18);
    const int batch = 2, len = 8, cin = 3, cout = 4;
    auto x = randleaf(rng, batch * len, cin);

    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{4, 2, 1}}) {
        auto w = randleaf(rng, k * cin, cout);
        auto b = randleaf(rng, 1, cout);
        const auto lo = ad::conv_out_len(len, k, stride, pad);
        MatD proj = rng.normal_mat<double>(batch * lo, cout);
        auto build = [&, k = k, stride = stride, pad = pad] {
            auto y = ad::conv1d(x, w, b, batch, k, stride, pad);
            return ad::mean_all(ad::cmul(y, Var<double>::leaf(proj, false)));
        };
        auto res = fd_check(build, {x, w, b});
        CHECK(res.max_err < 1e-6);
    }
}

TEST_CASE("conv1d_transpose doubles length and matches finite differences") {
    Rng rng(19);
    const int batch = 2, len = 5, cin = 3, cout = 2, k = 4, stride = 2, pad = 1;
    auto x = randleaf(rng, batch * len, cin);
    auto w = randleaf(rng, k * cin, cout);
    auto b = randleaf(rng, 1, cout);
    CHECK(ad::convT_out_len(len, k, stride, pad) == 2 * len);
    MatD proj = rng.normal_mat<double>(batch * 2 * len, cout);
    auto build = [&] {
        auto y = ad::conv1d_transpose(x, w, b, batch, k, stride, pad);
        return ad::mean_all(ad::cmul(y, Var<double>::leaf(proj, false)));
    };
    auto res = fd_check(build, {x, w, b});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("layernorm rows") {
    Rng rng(20);
    auto x = randleaf(rng, 5, 6);
    auto g = randleaf(rng, 1, 6);
    auto b = randleaf(rng, 1, 6);
    MatD proj = rng.normal_mat<double>(5, 6);
    auto build = [&] {
        auto y = ad::layernorm_rows(x, g, b);
        return ad::mean_all(ad::cmul(y, Var<double>::leaf(proj, false)));
    };
    auto res = fd_check(build, {x, g, b});
    CHECK(res.max_err < 1e-5);
}

TEST_CASE("mhsa_core attends within samples only") {
    Rng rng(21);
    const int batch = 2, t = 4, d = 6, heads = 2;
    auto q = randleaf(rng, batch * t, d);
    auto k = randleaf(rng, batch * t, d);
    auto v = randleaf(rng, batch * t, d);
    MatD proj = rng.normal_mat<double>(batch * t, d);
    auto build = [&] {
        auto y = ad::mhsa_core(q, k, v, batch, heads);
        return ad::mean_all(ad::cmul(y, Var<double>::leaf(proj, false)));
    };
    auto res = fd_check(build, {q, k, v}, 1e-6);
    CHECK(res.max_err < 1e-5);

    // changing sample 1's v must not affect sample 0's output
    auto y0 = ad::mhsa_core(q, k, v, batch, heads).val().topRows(t).eval();
    MatD v2 = v.val();
    v2.bottomRows(t).setConstant(9.0);
    auto y1 = ad::mhsa_core(q, k, Var<double>::leaf(v2, false), batch, heads)
                  .val()
                  .topRows(t)
                  .eval();
    CHECK((y0 - y1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross entropy against explicit log-softmax") {
    Rng rng(22);
    auto logits = randleaf(rng, 6, 5);
    std::vector<int> targets = {0, 4, 2, 2, 1, 3};
    auto build = [&] { return ad::ce_loss_mean(logits, targets); };
    auto res = fd_check(build, {logits});
    CHECK(res.max_err < 1e-6);

    // value cross-check
    double expect = 0.0;
    for (int i = 0; i < 6; ++i) {
        double z = 0;
        for (int j = 0; j < 5; ++j) z += std::exp(logits.val()(i, j));
        expect -= logits.val()(i, targets[i]) - std::log(z);
    }
    expect /= 6.0;
    CHECK(build().val()(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("composite losses") {
    Rng rng(23);
    auto a = randleaf(rng, 4, 3);
    auto b = randleaf(rng, 4, 3);
    auto res1 = fd_check([&] { return ad::mae_loss(a, b); }, {a, b});
    CHECK(res1.max_err < 1e-5);
    auto res2 = fd_check([&] { return ad::mse_loss(a, b); }, {a, b});
    CHECK(res2.max_err < 1e-6);
}

TEST_CASE("dropout at rate zero is identity; masks scale by keep probability") {
    Rng rng(24);
    auto x = randleaf(rng, 10, 10);
    Rng r1(1);
    auto y = nn::dropout(x, 0.0, true, r1);
    CHECK(y.node().get() == x.node().get());
    Rng r2(2);
    auto z = nn::dropout(x, 0.5, true, r2);
    int zeros = 0;
    for (Eigen::Index i = 0; i < z.val().size(); ++i) {
        const double v = z.val().data()[i];
        if (v == 0.0) ++zeros;
        else CHECK(v == doctest::Approx(2.0 * x.val().data()[i]));
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);
    // inference mode ignores the rng entirely
    Rng r3(3);
    auto w = nn::dropout(x, 0.5, false, r3);
    CHECK(w.node().get() == x.node().get());
}

TEST_CASE("adam reduces a quadratic") {
    nn::ParamStore<double> ps;
    auto p = ps.add("p", MatD::Constant(3, 3, 5.0));
    nn::Adam<double> opt(0.1);
    for (int i = 0; i < 200; ++i) {
        ps.zero_grad();
        auto loss = ad::mse_loss(p, ad::Var<double>::leaf(MatD::Zero(3, 3), false));
        ad::backward(loss);
        opt.step(ps);
    }
    CHECK(p.val().cwiseAbs().maxCoeff() < 0.2);
}
