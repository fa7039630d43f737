#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "pincwell/io.hpp"
#include "pincwell/neural.hpp"
#include "test_util.hpp"

using namespace pincwell;

namespace {

bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::abs(b) + abs_floor;
}

// Theta assembly helpers (canonical order, row-major within a matrix).
void put_mat(Vec& th, long& ofs, const Mat& W) {
    for (long i = 0; i < W.rows(); ++i)
        for (long j = 0; j < W.cols(); ++j) th(ofs++) = W(i, j);
}
void put_vec(Vec& th, long& ofs, const Vec& b) {
    th.segment(ofs, b.size()) = b;
    ofs += b.size();
}
Mat take_mat(const Vec& th, long& ofs, int r, int c) {
    Mat W(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) W(i, j) = th(ofs++);
    return W;
}
Vec take_vec(const Vec& th, long& ofs, int n) {
    Vec b = th.segment(ofs, n);
    ofs += n;
    return b;
}

// Scalar-loop re-evaluation of both architectures, independent of the
// batched Eigen implementation. Works on one column at a time.
void naive_affine(const Mat& W, const Vec& b, const Vec& x, Vec& out) {
    out.resize(W.rows());
    for (int i = 0; i < W.rows(); ++i) {
        double s = b(i);
        for (int j = 0; j < W.cols(); ++j) s += W(i, j) * x(j);
        out(i) = s;
    }
}

void naive_skip(const FeedforwardNetwork& net, const Vec& x, const Vec& xdot, Vec& y, Vec& ydot) {
    const Vec th = net.get_parameters();
    long ofs = 0;
    const int ni = net.input_dim(), no = net.output_dim(), L = net.n_layers(), w = net.width();
    const Mat Wu = take_mat(th, ofs, w, ni);
    const Vec bu = take_vec(th, ofs, w);
    const Mat Wv = take_mat(th, ofs, w, ni);
    const Vec bv = take_vec(th, ofs, w);

    Vec su, sv;
    naive_affine(Wu, bu, x, su);
    naive_affine(Wv, bv, x, sv);
    Vec u(w), v(w), udot(w), vdot(w);
    Vec sudot, svdot;
    naive_affine(Wu, Vec::Zero(w), xdot, sudot);
    naive_affine(Wv, Vec::Zero(w), xdot, svdot);
    for (int i = 0; i < w; ++i) {
        u(i) = std::tanh(su(i));
        v(i) = std::tanh(sv(i));
        udot(i) = (1 - u(i) * u(i)) * sudot(i);
        vdot(i) = (1 - v(i) * v(i)) * svdot(i);
    }

    Vec a = x, adot = xdot;
    for (int k = 0; k < L; ++k) {
        const Mat Wz = take_mat(th, ofs, w, k == 0 ? ni : w);
        const Vec bz = take_vec(th, ofs, w);
        Vec s, sdot;
        naive_affine(Wz, bz, a, s);
        naive_affine(Wz, Vec::Zero(w), adot, sdot);
        Vec an(w), andot(w);
        for (int i = 0; i < w; ++i) {
            const double z = std::tanh(s(i));
            const double zdot = (1 - z * z) * sdot(i);
            an(i) = u(i) + z * (v(i) - u(i));
            andot(i) = udot(i) + zdot * (v(i) - u(i)) + z * (vdot(i) - udot(i));
        }
        a = an;
        adot = andot;
    }
    const Mat Wo = take_mat(th, ofs, no, w);
    const Vec bo = take_vec(th, ofs, no);
    naive_affine(Wo, bo, a, y);
    naive_affine(Wo, Vec::Zero(no), adot, ydot);
}

void naive_dense(const FeedforwardNetwork& net, const Vec& x, const Vec& xdot, Vec& y, Vec& ydot) {
    const Vec th = net.get_parameters();
    long ofs = 0;
    const int ni = net.input_dim(), no = net.output_dim(), L = net.n_layers(), w = net.width();
    Vec a = x, adot = xdot;
    for (int k = 0; k < L; ++k) {
        const Mat W = take_mat(th, ofs, w, k == 0 ? ni : w);
        const Vec b = take_vec(th, ofs, w);
        Vec s, sdot;
        naive_affine(W, b, a, s);
        naive_affine(W, Vec::Zero(w), adot, sdot);
        Vec an(w), andot(w);
        for (int i = 0; i < w; ++i) {
            an(i) = std::tanh(s(i));
            andot(i) = (1 - an(i) * an(i)) * sdot(i);
        }
        a = an;
        adot = andot;
    }
    const Mat Wo = take_mat(th, ofs, no, w);
    const Vec bo = take_vec(th, ofs, no);
    naive_affine(Wo, bo, a, y);
    naive_affine(Wo, Vec::Zero(no), adot, ydot);
}

// Literal-weight 2-in/2-out, 2-layer, 3-neuron nets used for the frozen
// reference values below.
std::unique_ptr<FeedforwardNetwork> tiny_skip() {
    auto net = make_network("skip", 2, 2, 2, 3);
    Vec th(net->n_params());
    long ofs = 0;
    Mat Wu(3, 2), Wv(3, 2), Wz0(3, 2), Wz1(3, 3), Wo(2, 3);
    Wu << 0.3, -0.2, 0.1, 0.4, -0.5, 0.2;
    Wv << -0.4, 0.1, 0.25, -0.3, 0.15, 0.05;
    Wz0 << 0.2, -0.1, -0.3, 0.25, 0.4, 0.1;
    Wz1 << 0.1, 0.2, -0.3, 0.05, -0.15, 0.25, -0.2, 0.3, 0.1;
    Wo << 0.5, -0.25, 0.1, -0.3, 0.2, 0.4;
    Vec bu(3), bv(3), bz0(3), bz1(3), bo(2);
    bu << 0.05, -0.1, 0.2;
    bv << 0.1, 0.0, -0.15;
    bz0 << -0.05, 0.1, 0.0;
    bz1 << 0.2, -0.1, 0.05;
    bo << 0.1, -0.2;
    put_mat(th, ofs, Wu);
    put_vec(th, ofs, bu);
    put_mat(th, ofs, Wv);
    put_vec(th, ofs, bv);
    put_mat(th, ofs, Wz0);
    put_vec(th, ofs, bz0);
    put_mat(th, ofs, Wz1);
    put_vec(th, ofs, bz1);
    put_mat(th, ofs, Wo);
    put_vec(th, ofs, bo);
    REQUIRE(ofs == net->n_params());
    net->set_parameters(th);
    return net;
}

std::unique_ptr<FeedforwardNetwork> tiny_dense() {
    auto net = make_network("dense", 2, 2, 2, 3);
    Vec th(net->n_params());
    long ofs = 0;
    Mat W0(3, 2), W1(3, 3), Wo(2, 3);
    W0 << 0.3, -0.2, 0.1, 0.4, -0.5, 0.2;
    W1 << 0.1, 0.2, -0.3, 0.05, -0.15, 0.25, -0.2, 0.3, 0.1;
    Wo << 0.5, -0.25, 0.1, -0.3, 0.2, 0.4;
    Vec b0(3), b1(3), bo(2);
    b0 << 0.05, -0.1, 0.2;
    b1 << 0.2, -0.1, 0.05;
    bo << 0.1, -0.2;
    put_mat(th, ofs, W0);
    put_vec(th, ofs, b0);
    put_mat(th, ofs, W1);
    put_vec(th, ofs, b1);
    put_mat(th, ofs, Wo);
    put_vec(th, ofs, bo);
    REQUIRE(ofs == net->n_params());
    net->set_parameters(th);
    return net;
}

Mat random_inputs(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    Mat X(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) X(i, j) = rng.uniform(-1.0, 1.0);
    return X;
}

// Scalar objective used for finite-difference checks:
//   L = sum(C1 .* y) + sum(C2 .* ydot)
double mixed_loss(const FeedforwardNetwork& net, const Mat& X, const Mat& Xdot, const Mat& C1,
                  const Mat& C2) {
    auto tape = net.record(X, &Xdot);
    return (C1.array() * tape->y().array()).sum() + (C2.array() * tape->ydot().array()).sum();
}

}  // namespace

TEST_CASE("parameter counts and layout") {
    SkipNetwork skip(6, 3, 6, 30);
    DenseNetwork dense(6, 3, 6, 30);
    CHECK(skip.n_params() == 5373);
    CHECK(dense.n_params() == 4953);
    CHECK(tiny_skip()->n_params() == 47);

    for (const FeedforwardNetwork* net : {(const FeedforwardNetwork*)&skip,
                                          (const FeedforwardNetwork*)&dense}) {
        auto layout = net->parameter_layout();
        long ofs = 0;
        for (const auto& slice : layout) {
            CHECK(slice.offset == ofs);
            CHECK(slice.size > 0);
            ofs += slice.size;
        }
        CHECK(ofs == net->n_params());
        CHECK(layout.back().name == "output");
    }
    CHECK(skip.parameter_layout().size() == 2 + 6 + 1);
    CHECK(skip.parameter_layout()[0].name == "encoder_u");
    CHECK(dense.parameter_layout().size() == 6 + 1);
    CHECK(dense.parameter_layout()[0].name == "hidden_1");
}

TEST_CASE("zero parameters give bias output and zero tangent") {
    for (const char* arch : {"skip", "dense"}) {
        auto net = make_network(arch, 6, 3, 4, 10);
        Vec th = Vec::Zero(net->n_params());
        th(net->n_params() - 3) = 1.5;
        th(net->n_params() - 2) = -0.25;
        th(net->n_params() - 1) = 4.0;
        net->set_parameters(th);
        const Mat X = random_inputs(6, 5, 11);
        Mat Y, Ydot;
        net->forward_with_time_tangent(X, Y, Ydot);
        for (int j = 0; j < 5; ++j) {
            CHECK(Y(0, j) == 1.5);
            CHECK(Y(1, j) == -0.25);
            CHECK(Y(2, j) == 4.0);
        }
        CHECK(Ydot.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("closed gate reduces the skip net to encoder U") {
    SkipNetwork net(4, 2, 3, 8);
    net.init_glorot(99);
    Vec th = net.get_parameters();
    for (const auto& slice : net.parameter_layout())
        if (slice.name.rfind("hidden_", 0) == 0) th.segment(slice.offset, slice.size).setZero();
    net.set_parameters(th);

    long ofs = 0;
    const Mat Wu = take_mat(th, ofs, 8, 4);
    const Vec bu = take_vec(th, ofs, 8);
    ofs = net.parameter_layout().back().offset;
    const Mat Wo = take_mat(th, ofs, 2, 8);
    const Vec bo = take_vec(th, ofs, 2);

    const Mat X = random_inputs(4, 6, 21);
    const Mat Y = net.forward(X);
    for (int j = 0; j < X.cols(); ++j) {
        const Vec u = ((Wu * X.col(j) + bu).array().tanh()).matrix();
        const Vec expect = Wo * u + bo;
        CHECK((Y.col(j) - expect).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("matches frozen reference evaluation") {
    Mat X(2, 1), Xdot(2, 1);
    X << 0.7, -0.4;
    Xdot << 1.0, 0.0;

    auto skip = tiny_skip();
    {
        auto tape = skip->record(X, &Xdot);
        CHECK(close_rel(tape->y()(0, 0), 0.23699241898334625, 1e-13));
        CHECK(close_rel(tape->y()(1, 0), -0.4055437404763983, 1e-13));
        CHECK(close_rel(tape->ydot()(0, 0), -0.02700560071211984, 1e-13));
        CHECK(close_rel(tape->ydot()(1, 0), -0.23394063964064613, 1e-13));

        // L = sum(y) + sum(ydot): leading gradient entry and input adjoint.
        const Mat Ybar = Mat::Ones(2, 1), Ydotbar = Mat::Ones(2, 1);
        Mat Xbar = Mat::Zero(2, 1);
        const Vec grad = skip->backward(*tape, Ybar, &Ydotbar, &Xbar);
        CHECK(close_rel(grad(0), 0.13830405487790587, 1e-12));
        CHECK(close_rel(Xbar(0, 0), -0.23763289653567005, 1e-12));
        CHECK(close_rel(Xbar(1, 0), 0.11402001185623394, 1e-12));
    }

    auto dense = tiny_dense();
    {
        auto tape = dense->record(X, &Xdot);
        CHECK(close_rel(tape->y()(0, 0), 0.24701512559688629, 1e-13));
        CHECK(close_rel(tape->y()(1, 0), -0.33708993873215803, 1e-13));
        CHECK(close_rel(tape->ydot()(0, 0), 0.11038822081390087, 1e-13));
        CHECK(close_rel(tape->ydot()(1, 0), -0.10500091976401763, 1e-13));
    }
}

TEST_CASE("scalar-loop reference agrees on random nets") {
    for (const char* arch : {"skip", "dense"}) {
        for (uint64_t seed : {1u, 2u}) {
            auto net = make_network(arch, 6, 3, 3, 10);
            net->init_glorot(seed);
            const Mat X = random_inputs(6, 5, 100 + seed);
            const Mat Xdot = random_inputs(6, 5, 200 + seed);
            auto tape = net->record(X, &Xdot);
            for (int j = 0; j < X.cols(); ++j) {
                Vec y, ydot;
                if (std::string(arch) == "skip")
                    naive_skip(*net, X.col(j), Xdot.col(j), y, ydot);
                else
                    naive_dense(*net, X.col(j), Xdot.col(j), y, ydot);
                CHECK((tape->y().col(j) - y).cwiseAbs().maxCoeff() < 1e-13);
                CHECK((tape->ydot().col(j) - ydot).cwiseAbs().maxCoeff() < 1e-13);
            }
        }
    }
}

TEST_CASE("time tangent matches finite differences") {
    const double h = 1e-5;
    for (const char* arch : {"skip", "dense"}) {
        auto net = make_network(arch, 6, 3, 6, 30);
        net->init_glorot(7);
        const Mat X = random_inputs(6, 5, 42);
        Mat Y, Ydot;
        net->forward_with_time_tangent(X, Y, Ydot);
        Mat Xp = X, Xm = X;
        Xp.row(0).array() += h;
        Xm.row(0).array() -= h;
        const Mat fd = (net->forward(Xp) - net->forward(Xm)) / (2 * h);
        for (int j = 0; j < X.cols(); ++j)
            for (int i = 0; i < 3; ++i) CHECK(close_rel(Ydot(i, j), fd(i, j), 1e-6, 1e-9));
    }
}

TEST_CASE("tangent is linear in the seed") {
    auto net = make_network("skip", 6, 3, 4, 12);
    net->init_glorot(3);
    const Mat X = random_inputs(6, 4, 5);
    const Mat Sa = random_inputs(6, 4, 6);
    const Mat Sb = random_inputs(6, 4, 7);
    const Mat sum = Sa + Sb;
    const Mat scaled = 2.5 * Sa;
    auto ta = net->record(X, &Sa);
    auto tb = net->record(X, &Sb);
    auto tsum = net->record(X, &sum);
    auto tscaled = net->record(X, &scaled);
    CHECK((tsum->ydot() - ta->ydot() - tb->ydot()).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((tscaled->ydot() - 2.5 * ta->ydot()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("parameter gradient matches finite differences") {
    const double h = 1e-6;
    for (const char* arch : {"skip", "dense"}) {
        // Toy size: exhaustive sweep with the mixed output+tangent loss.
        auto net = std::string(arch) == "skip" ? tiny_skip() : tiny_dense();
        const Mat X = random_inputs(2, 3, 31);
        const Mat Xdot = random_inputs(2, 3, 32);
        const Mat C1 = random_inputs(2, 3, 33);
        const Mat C2 = random_inputs(2, 3, 34);

        auto tape = net->record(X, &Xdot);
        Mat Xbar = Mat::Zero(2, 3);
        const Vec grad = net->backward(*tape, C1, &C2, &Xbar);

        Vec th = net->get_parameters();
        auto scratch = net->clone();
        for (long p = 0; p < th.size(); ++p) {
            Vec tp = th, tm = th;
            tp(p) += h;
            tm(p) -= h;
            scratch->set_parameters(tp);
            const double lp = mixed_loss(*scratch, X, Xdot, C1, C2);
            scratch->set_parameters(tm);
            const double lm = mixed_loss(*scratch, X, Xdot, C1, C2);
            const double fd = (lp - lm) / (2 * h);
            CHECK(close_rel(grad(p), fd, 1e-4, 1e-8));
        }

        // Input adjoint against finite differences as well.
        for (int j = 0; j < X.cols(); ++j) {
            for (int i = 0; i < X.rows(); ++i) {
                Mat Xp = X, Xm = X;
                Xp(i, j) += h;
                Xm(i, j) -= h;
                const double fd =
                    (mixed_loss(*net, Xp, Xdot, C1, C2) - mixed_loss(*net, Xm, Xdot, C1, C2)) /
                    (2 * h);
                CHECK(close_rel(Xbar(i, j), fd, 1e-4, 1e-8));
            }
        }
    }
}

TEST_CASE("parameter gradient matches finite differences at full size") {
    const double h = 1e-6;
    for (const char* arch : {"skip", "dense"}) {
        auto net = make_network(arch, 6, 3, 6, 30);
        net->init_glorot(17);
        const Mat X = random_inputs(6, 4, 51);
        const Mat Xdot = random_inputs(6, 4, 52);
        const Mat C1 = random_inputs(3, 4, 53);
        const Mat C2 = random_inputs(3, 4, 54);

        auto tape = net->record(X, &Xdot);
        const Vec grad = net->backward(*tape, C1, &C2);

        Vec th = net->get_parameters();
        auto scratch = net->clone();
        int bad = 0;
        for (long p = 0; p < th.size(); ++p) {
            Vec tp = th, tm = th;
            tp(p) += h;
            tm(p) -= h;
            scratch->set_parameters(tp);
            const double lp = mixed_loss(*scratch, X, Xdot, C1, C2);
            scratch->set_parameters(tm);
            const double lm = mixed_loss(*scratch, X, Xdot, C1, C2);
            const double fd = (lp - lm) / (2 * h);
            if (!close_rel(grad(p), fd, 1e-4, 1e-8)) ++bad;
        }
        CHECK(bad == 0);
    }
}

TEST_CASE("batch gradient equals sum of per-column gradients") {
    auto net = make_network("skip", 6, 3, 6, 30);
    net->init_glorot(23);
    const Mat X = random_inputs(6, 7, 61);
    const Mat Xdot = random_inputs(6, 7, 62);
    const Mat C1 = random_inputs(3, 7, 63);
    const Mat C2 = random_inputs(3, 7, 64);

    auto tape = net->record(X, &Xdot);
    const Vec batch_grad = net->backward(*tape, C1, &C2);

    Vec acc = Vec::Zero(net->n_params());
    for (int j = 0; j < X.cols(); ++j) {
        const Mat Xj = X.col(j), Xdj = Xdot.col(j), C1j = C1.col(j), C2j = C2.col(j);
        auto tj = net->record(Xj, &Xdj);
        acc += net->backward(*tj, C1j, &C2j);
    }
    CHECK((batch_grad - acc).cwiseAbs().maxCoeff() < 1e-11 * (1.0 + acc.cwiseAbs().maxCoeff()));
}

TEST_CASE("flatten round-trip and glorot determinism") {
    for (const char* arch : {"skip", "dense"}) {
        auto a = make_network(arch, 6, 3, 6, 30);
        auto b = make_network(arch, 6, 3, 6, 30);
        a->init_glorot(5);
        b->init_glorot(5);
        CHECK((a->get_parameters() - b->get_parameters()).cwiseAbs().maxCoeff() == 0.0);
        b->init_glorot(6);
        CHECK((a->get_parameters() - b->get_parameters()).cwiseAbs().maxCoeff() > 0.0);

        const Vec th = a->get_parameters();
        a->set_parameters(th);
        CHECK((a->get_parameters() - th).cwiseAbs().maxCoeff() == 0.0);

        // Bound: every weight within the widest glorot interval (the output
        // layer has the smallest fan sum here), biases zero.
        const double bound = std::sqrt(6.0 / (3 + 30));
        CHECK(th.cwiseAbs().maxCoeff() <= bound);
        for (const auto& slice : a->parameter_layout()) {
            // biases sit at the tail of each slice
            const long nb = slice.name == "output" ? 3 : 30;
            CHECK(th.segment(slice.offset + slice.size - nb, nb).cwiseAbs().maxCoeff() == 0.0);
        }

        auto c = a->clone();
        CHECK(c->architecture() == a->architecture());
        CHECK((c->get_parameters() - a->get_parameters()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("checkpoint round-trip") {
    for (const char* arch : {"skip", "dense"}) {
        auto net = make_network(arch, 6, 3, 4, 12);
        net->init_glorot(77);
        const std::string path = std::string("tmp_ckpt_") + arch + ".txt";
        save_network(*net, path);
        auto loaded = load_network(path);
        CHECK(loaded->architecture() == net->architecture());
        CHECK(loaded->input_dim() == 6);
        CHECK(loaded->n_layers() == 4);
        CHECK(loaded->width() == 12);
        CHECK((loaded->get_parameters() - net->get_parameters()).cwiseAbs().maxCoeff() == 0.0);
        std::remove(path.c_str());
    }
    atomic_write_file("tmp_ckpt_bad.txt", "not a checkpoint\n");
    CHECK_THROWS_AS(load_network("tmp_ckpt_bad.txt"), std::runtime_error);
    std::remove("tmp_ckpt_bad.txt");
}

TEST_CASE("layer gradient statistics") {
    auto net = make_network("skip", 2, 2, 2, 3);
    Vec grad(net->n_params());
    for (long i = 0; i < grad.size(); ++i) grad(i) = (i % 2 == 0) ? 2.0 : -4.0;
    const auto stats = net->layer_mean_abs(grad);
    const auto layout = net->parameter_layout();
    REQUIRE(stats.size() == layout.size());
    for (size_t k = 0; k < layout.size(); ++k) {
        const double expect = grad.segment(layout[k].offset, layout[k].size).cwiseAbs().mean();
        CHECK(stats[k] == expect);
    }
    CHECK_THROWS_AS(net->layer_mean_abs(Vec::Zero(3)), std::invalid_argument);
}

TEST_CASE("shape validation") {
    auto net = make_network("skip", 6, 3, 2, 5);
    net->init_glorot(1);
    const Mat X = random_inputs(5, 2, 1);  // wrong row count
    CHECK_THROWS_AS(net->record(X), std::invalid_argument);

    const Mat good = random_inputs(6, 2, 2);
    auto tape = net->record(good);  // no tangent
    CHECK_THROWS_AS(tape->ydot(), std::logic_error);
    const Mat Ybar = Mat::Ones(3, 2);
    const Mat Ydotbar = Mat::Ones(3, 2);
    CHECK_THROWS_AS(net->backward(*tape, Ybar, &Ydotbar), std::logic_error);
    const Mat bad_bar = Mat::Ones(2, 2);
    CHECK_THROWS_AS(net->backward(*tape, bad_bar), std::invalid_argument);
}
