#include "pincwell/neural.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pincwell/io.hpp"

namespace pincwell {

namespace {

// Row-major per matrix so the flat order matches the draw order of
// init_glorot and the checkpoint layout.
void flatten_into(const Mat& W, Vec& theta, long& ofs) {
    for (long i = 0; i < W.rows(); ++i)
        for (long j = 0; j < W.cols(); ++j) theta(ofs++) = W(i, j);
}

void flatten_into(const Vec& b, Vec& theta, long& ofs) {
    theta.segment(ofs, b.size()) = b;
    ofs += b.size();
}

void unflatten_from(Mat& W, const Vec& theta, long& ofs) {
    for (long i = 0; i < W.rows(); ++i)
        for (long j = 0; j < W.cols(); ++j) W(i, j) = theta(ofs++);
}

void unflatten_from(Vec& b, const Vec& theta, long& ofs) {
    b = theta.segment(ofs, b.size());
    ofs += b.size();
}

void glorot_fill(Mat& W, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
    for (long i = 0; i < W.rows(); ++i)
        for (long j = 0; j < W.cols(); ++j) W(i, j) = rng.uniform(-a, a);
}

Mat tanh_of(const Mat& s) { return s.array().tanh().matrix(); }

void check_shapes(const Mat& X, const Mat* Xdot, int n_in) {
    if (X.rows() != n_in) throw std::invalid_argument("network input row count mismatch");
    if (Xdot && (Xdot->rows() != X.rows() || Xdot->cols() != X.cols()))
        throw std::invalid_argument("input tangent shape mismatch");
}

void check_bars(const Mat& Y, const Mat& Ybar, const Mat* Ydotbar, bool tangent) {
    if (Ybar.rows() != Y.rows() || Ybar.cols() != Y.cols())
        throw std::invalid_argument("output adjoint shape mismatch");
    if (Ydotbar) {
        if (!tangent) throw std::logic_error("tangent adjoint given but no tangent recorded");
        if (Ydotbar->rows() != Y.rows() || Ydotbar->cols() != Y.cols())
            throw std::invalid_argument("tangent adjoint shape mismatch");
    }
}

}  // namespace

Vec FeedforwardNetwork::forward(const Vec& x) const {
    Mat X = x;
    Mat Y = forward(X);
    return Y.col(0);
}

void FeedforwardNetwork::forward_with_time_tangent(const Mat& X, Mat& Y, Mat& Ydot) const {
    Mat Xdot = Mat::Zero(X.rows(), X.cols());
    Xdot.row(0).setOnes();
    auto tape = record(X, &Xdot);
    Y = tape->y();
    Ydot = tape->ydot();
}

std::vector<double> FeedforwardNetwork::layer_mean_abs(const Vec& grad) const {
    if (grad.size() != n_params()) throw std::invalid_argument("gradient size mismatch");
    std::vector<double> out;
    for (const auto& slice : parameter_layout())
        out.push_back(grad.segment(slice.offset, slice.size).cwiseAbs().mean());
    return out;
}

// ===== SkipNetwork ===========================================================

namespace {

struct SkipTape final : public ForwardTape {
    Mat X, Xdot;
    Mat u, v;            // encoder activations, width x B
    Mat sudot, svdot;    // encoder pre-activation tangents
    Mat udot, vdot;
    std::vector<Mat> a;      // a[0] = X, a[k] = layer-k output
    std::vector<Mat> z;      // z[k] = tanh pre-gating activation of layer k+1
    std::vector<Mat> sdot;   // pre-activation tangents per layer
    std::vector<Mat> adot;   // adot[0] = Xdot
    Mat Y, Ydot;
    bool tangent = false;

    const Mat& y() const override { return Y; }
    const Mat& ydot() const override {
        if (!tangent) throw std::logic_error("tape recorded without input tangent");
        return Ydot;
    }
    bool has_tangent() const override { return tangent; }
};

}  // namespace

SkipNetwork::SkipNetwork(int n_in, int n_out, int n_layers, int width)
    : n_in_(n_in), n_out_(n_out), n_layers_(n_layers), width_(width) {
    if (n_in < 1 || n_out < 1 || n_layers < 1 || width < 1)
        throw std::invalid_argument("network dimensions must be positive");
    Wu_ = Mat::Zero(width, n_in);
    Wv_ = Mat::Zero(width, n_in);
    bu_ = Vec::Zero(width);
    bv_ = Vec::Zero(width);
    for (int k = 0; k < n_layers; ++k) {
        Wz_.push_back(Mat::Zero(width, k == 0 ? n_in : width));
        bz_.push_back(Vec::Zero(width));
    }
    Wo_ = Mat::Zero(n_out, width);
    bo_ = Vec::Zero(n_out);
}

long SkipNetwork::n_params() const {
    long n = 2 * (Wu_.size() + bu_.size());
    for (int k = 0; k < n_layers_; ++k) n += Wz_[k].size() + bz_[k].size();
    return n + Wo_.size() + bo_.size();
}

Vec SkipNetwork::get_parameters() const {
    Vec theta(n_params());
    long ofs = 0;
    flatten_into(Wu_, theta, ofs);
    flatten_into(bu_, theta, ofs);
    flatten_into(Wv_, theta, ofs);
    flatten_into(bv_, theta, ofs);
    for (int k = 0; k < n_layers_; ++k) {
        flatten_into(Wz_[k], theta, ofs);
        flatten_into(bz_[k], theta, ofs);
    }
    flatten_into(Wo_, theta, ofs);
    flatten_into(bo_, theta, ofs);
    return theta;
}

void SkipNetwork::set_parameters(const Vec& theta) {
    if (theta.size() != n_params()) throw std::invalid_argument("parameter vector size mismatch");
    long ofs = 0;
    unflatten_from(Wu_, theta, ofs);
    unflatten_from(bu_, theta, ofs);
    unflatten_from(Wv_, theta, ofs);
    unflatten_from(bv_, theta, ofs);
    for (int k = 0; k < n_layers_; ++k) {
        unflatten_from(Wz_[k], theta, ofs);
        unflatten_from(bz_[k], theta, ofs);
    }
    unflatten_from(Wo_, theta, ofs);
    unflatten_from(bo_, theta, ofs);
}

std::vector<LayerSlice> SkipNetwork::parameter_layout() const {
    std::vector<LayerSlice> layout;
    long ofs = 0;
    auto add = [&](const std::string& name, long size) {
        layout.push_back({name, ofs, size});
        ofs += size;
    };
    add("encoder_u", Wu_.size() + bu_.size());
    add("encoder_v", Wv_.size() + bv_.size());
    for (int k = 0; k < n_layers_; ++k)
        add("hidden_" + std::to_string(k + 1), Wz_[k].size() + bz_[k].size());
    add("output", Wo_.size() + bo_.size());
    return layout;
}

void SkipNetwork::init_glorot(uint64_t seed) {
    Rng rng(seed);
    glorot_fill(Wu_, rng);
    bu_.setZero();
    glorot_fill(Wv_, rng);
    bv_.setZero();
    for (int k = 0; k < n_layers_; ++k) {
        glorot_fill(Wz_[k], rng);
        bz_[k].setZero();
    }
    glorot_fill(Wo_, rng);
    bo_.setZero();
}

std::unique_ptr<FeedforwardNetwork> SkipNetwork::clone() const {
    return std::make_unique<SkipNetwork>(*this);
}

std::unique_ptr<ForwardTape> SkipNetwork::record(const Mat& X, const Mat* Xdot) const {
    check_shapes(X, Xdot, n_in_);
    auto tape = std::make_unique<SkipTape>();
    tape->X = X;
    tape->tangent = Xdot != nullptr;

    tape->u = tanh_of((Wu_ * X).colwise() + bu_);
    tape->v = tanh_of((Wv_ * X).colwise() + bv_);
    const Mat w = tape->v - tape->u;

    tape->a.resize(n_layers_ + 1);
    tape->z.resize(n_layers_);
    tape->a[0] = X;
    for (int k = 0; k < n_layers_; ++k) {
        tape->z[k] = tanh_of((Wz_[k] * tape->a[k]).colwise() + bz_[k]);
        tape->a[k + 1] = tape->u + tape->z[k].cwiseProduct(w);
    }
    tape->Y = (Wo_ * tape->a[n_layers_]).colwise() + bo_;

    if (tape->tangent) {
        tape->Xdot = *Xdot;
        tape->sudot = Wu_ * *Xdot;
        tape->svdot = Wv_ * *Xdot;
        tape->udot = (1.0 - tape->u.array().square()).matrix().cwiseProduct(tape->sudot);
        tape->vdot = (1.0 - tape->v.array().square()).matrix().cwiseProduct(tape->svdot);
        const Mat wdot = tape->vdot - tape->udot;
        tape->sdot.resize(n_layers_);
        tape->adot.resize(n_layers_ + 1);
        tape->adot[0] = *Xdot;
        for (int k = 0; k < n_layers_; ++k) {
            tape->sdot[k] = Wz_[k] * tape->adot[k];
            Mat zdot = (1.0 - tape->z[k].array().square()).matrix().cwiseProduct(tape->sdot[k]);
            tape->adot[k + 1] =
                tape->udot + zdot.cwiseProduct(w) + tape->z[k].cwiseProduct(wdot);
        }
        tape->Ydot = Wo_ * tape->adot[n_layers_];
    }
    return tape;
}

Vec SkipNetwork::backward(const ForwardTape& tape_in, const Mat& Ybar, const Mat* Ydotbar,
                          Mat* x_bar) const {
    const auto& t = dynamic_cast<const SkipTape&>(tape_in);
    check_bars(t.Y, Ybar, Ydotbar, t.tangent);
    const bool tan = Ydotbar != nullptr;
    const long B = t.X.cols();
    const Mat w = t.v - t.u;
    Mat wdot;
    if (tan) wdot = t.vdot - t.udot;

    Mat gWu = Mat::Zero(width_, n_in_), gWv = Mat::Zero(width_, n_in_);
    Vec gbu = Vec::Zero(width_), gbv = Vec::Zero(width_);
    std::vector<Mat> gWz(n_layers_);
    std::vector<Vec> gbz(n_layers_);
    Mat gWo = Ybar * t.a[n_layers_].transpose();
    Vec gbo = Ybar.rowwise().sum();
    if (tan) gWo += *Ydotbar * t.adot[n_layers_].transpose();

    Mat abar = Wo_.transpose() * Ybar;
    Mat adotbar;
    if (tan) adotbar = Wo_.transpose() * *Ydotbar;

    Mat ubar = Mat::Zero(width_, B), wbar = Mat::Zero(width_, B);
    Mat udotbar, wdotbar;
    if (tan) {
        udotbar = Mat::Zero(width_, B);
        wdotbar = Mat::Zero(width_, B);
    }

    for (int k = n_layers_ - 1; k >= 0; --k) {
        const Mat& z = t.z[k];
        const Mat d = (1.0 - z.array().square()).matrix();
        Mat zbar = abar.cwiseProduct(w);
        wbar += abar.cwiseProduct(z);
        ubar += abar;
        Mat sdotbar;
        if (tan) {
            const Mat zdot = d.cwiseProduct(t.sdot[k]);
            zbar += adotbar.cwiseProduct(wdot);
            Mat zdotbar = adotbar.cwiseProduct(w);
            wdotbar += adotbar.cwiseProduct(z);
            wbar += adotbar.cwiseProduct(zdot);
            udotbar += adotbar;
            sdotbar = zdotbar.cwiseProduct(d);
            zbar += zdotbar.cwiseProduct((-2.0 * z.array() * t.sdot[k].array()).matrix());
        }
        const Mat sbar = zbar.cwiseProduct(d);
        gWz[k] = sbar * t.a[k].transpose();
        gbz[k] = sbar.rowwise().sum();
        if (tan) gWz[k] += sdotbar * t.adot[k].transpose();
        abar = Wz_[k].transpose() * sbar;
        if (tan) adotbar = Wz_[k].transpose() * sdotbar;
    }

    Mat Xbar = abar;  // a_0 = X

    Mat vbar = wbar;
    ubar -= wbar;
    Mat vdotbar;
    if (tan) {
        vdotbar = wdotbar;
        udotbar -= wdotbar;
    }

    {  // encoder u
        const Mat du = (1.0 - t.u.array().square()).matrix();
        Mat sudotbar;
        if (tan) {
            sudotbar = udotbar.cwiseProduct(du);
            ubar += udotbar.cwiseProduct((-2.0 * t.u.array() * t.sudot.array()).matrix());
        }
        const Mat subar = ubar.cwiseProduct(du);
        gWu = subar * t.X.transpose();
        gbu = subar.rowwise().sum();
        if (tan) gWu += sudotbar * t.Xdot.transpose();
        Xbar += Wu_.transpose() * subar;
    }
    {  // encoder v
        const Mat dv = (1.0 - t.v.array().square()).matrix();
        Mat svdotbar;
        if (tan) {
            svdotbar = vdotbar.cwiseProduct(dv);
            vbar += vdotbar.cwiseProduct((-2.0 * t.v.array() * t.svdot.array()).matrix());
        }
        const Mat svbar = vbar.cwiseProduct(dv);
        gWv = svbar * t.X.transpose();
        gbv = svbar.rowwise().sum();
        if (tan) gWv += svdotbar * t.Xdot.transpose();
        Xbar += Wv_.transpose() * svbar;
    }

    if (x_bar) *x_bar += Xbar;

    Vec grad(n_params());
    long ofs = 0;
    flatten_into(gWu, grad, ofs);
    flatten_into(gbu, grad, ofs);
    flatten_into(gWv, grad, ofs);
    flatten_into(gbv, grad, ofs);
    for (int k = 0; k < n_layers_; ++k) {
        flatten_into(gWz[k], grad, ofs);
        flatten_into(gbz[k], grad, ofs);
    }
    flatten_into(gWo, grad, ofs);
    flatten_into(gbo, grad, ofs);
    return grad;
}

// ===== DenseNetwork ==========================================================

namespace {

struct DenseTape final : public ForwardTape {
    Mat X, Xdot;
    std::vector<Mat> a;     // a[0] = X, a[k] = tanh output of layer k
    std::vector<Mat> sdot;  // pre-activation tangents per layer
    std::vector<Mat> adot;  // adot[0] = Xdot
    Mat Y, Ydot;
    bool tangent = false;

    const Mat& y() const override { return Y; }
    const Mat& ydot() const override {
        if (!tangent) throw std::logic_error("tape recorded without input tangent");
        return Ydot;
    }
    bool has_tangent() const override { return tangent; }
};

}  // namespace

DenseNetwork::DenseNetwork(int n_in, int n_out, int n_layers, int width)
    : n_in_(n_in), n_out_(n_out), n_layers_(n_layers), width_(width) {
    if (n_in < 1 || n_out < 1 || n_layers < 1 || width < 1)
        throw std::invalid_argument("network dimensions must be positive");
    for (int k = 0; k < n_layers; ++k) {
        W_.push_back(Mat::Zero(width, k == 0 ? n_in : width));
        b_.push_back(Vec::Zero(width));
    }
    Wo_ = Mat::Zero(n_out, width);
    bo_ = Vec::Zero(n_out);
}

long DenseNetwork::n_params() const {
    long n = 0;
    for (int k = 0; k < n_layers_; ++k) n += W_[k].size() + b_[k].size();
    return n + Wo_.size() + bo_.size();
}

Vec DenseNetwork::get_parameters() const {
    Vec theta(n_params());
    long ofs = 0;
    for (int k = 0; k < n_layers_; ++k) {
        flatten_into(W_[k], theta, ofs);
        flatten_into(b_[k], theta, ofs);
    }
    flatten_into(Wo_, theta, ofs);
    flatten_into(bo_, theta, ofs);
    return theta;
}

void DenseNetwork::set_parameters(const Vec& theta) {
    if (theta.size() != n_params()) throw std::invalid_argument("parameter vector size mismatch");
    long ofs = 0;
    for (int k = 0; k < n_layers_; ++k) {
        unflatten_from(W_[k], theta, ofs);
        unflatten_from(b_[k], theta, ofs);
    }
    unflatten_from(Wo_, theta, ofs);
    unflatten_from(bo_, theta, ofs);
}

std::vector<LayerSlice> DenseNetwork::parameter_layout() const {
    std::vector<LayerSlice> layout;
    long ofs = 0;
    for (int k = 0; k < n_layers_; ++k) {
        const long size = W_[k].size() + b_[k].size();
        layout.push_back({"hidden_" + std::to_string(k + 1), ofs, size});
        ofs += size;
    }
    layout.push_back({"output", ofs, Wo_.size() + bo_.size()});
    return layout;
}

void DenseNetwork::init_glorot(uint64_t seed) {
    Rng rng(seed);
    for (int k = 0; k < n_layers_; ++k) {
        glorot_fill(W_[k], rng);
        b_[k].setZero();
    }
    glorot_fill(Wo_, rng);
    bo_.setZero();
}

std::unique_ptr<FeedforwardNetwork> DenseNetwork::clone() const {
    return std::make_unique<DenseNetwork>(*this);
}

std::unique_ptr<ForwardTape> DenseNetwork::record(const Mat& X, const Mat* Xdot) const {
    check_shapes(X, Xdot, n_in_);
    auto tape = std::make_unique<DenseTape>();
    tape->X = X;
    tape->tangent = Xdot != nullptr;
    tape->a.resize(n_layers_ + 1);
    tape->a[0] = X;
    for (int k = 0; k < n_layers_; ++k)
        tape->a[k + 1] = tanh_of((W_[k] * tape->a[k]).colwise() + b_[k]);
    tape->Y = (Wo_ * tape->a[n_layers_]).colwise() + bo_;

    if (tape->tangent) {
        tape->Xdot = *Xdot;
        tape->sdot.resize(n_layers_);
        tape->adot.resize(n_layers_ + 1);
        tape->adot[0] = *Xdot;
        for (int k = 0; k < n_layers_; ++k) {
            tape->sdot[k] = W_[k] * tape->adot[k];
            tape->adot[k + 1] =
                (1.0 - tape->a[k + 1].array().square()).matrix().cwiseProduct(tape->sdot[k]);
        }
        tape->Ydot = Wo_ * tape->adot[n_layers_];
    }
    return tape;
}

Vec DenseNetwork::backward(const ForwardTape& tape_in, const Mat& Ybar, const Mat* Ydotbar,
                           Mat* x_bar) const {
    const auto& t = dynamic_cast<const DenseTape&>(tape_in);
    check_bars(t.Y, Ybar, Ydotbar, t.tangent);
    const bool tan = Ydotbar != nullptr;

    std::vector<Mat> gW(n_layers_);
    std::vector<Vec> gb(n_layers_);
    Mat gWo = Ybar * t.a[n_layers_].transpose();
    Vec gbo = Ybar.rowwise().sum();
    if (tan) gWo += *Ydotbar * t.adot[n_layers_].transpose();

    Mat abar = Wo_.transpose() * Ybar;
    Mat adotbar;
    if (tan) adotbar = Wo_.transpose() * *Ydotbar;

    for (int k = n_layers_ - 1; k >= 0; --k) {
        const Mat& z = t.a[k + 1];
        const Mat d = (1.0 - z.array().square()).matrix();
        Mat zbar = abar;
        Mat sdotbar;
        if (tan) {
            sdotbar = adotbar.cwiseProduct(d);
            zbar += adotbar.cwiseProduct((-2.0 * z.array() * t.sdot[k].array()).matrix());
        }
        const Mat sbar = zbar.cwiseProduct(d);
        gW[k] = sbar * t.a[k].transpose();
        gb[k] = sbar.rowwise().sum();
        if (tan) gW[k] += sdotbar * t.adot[k].transpose();
        abar = W_[k].transpose() * sbar;
        if (tan) adotbar = W_[k].transpose() * sdotbar;
    }

    if (x_bar) *x_bar += abar;

    Vec grad(n_params());
    long ofs = 0;
    for (int k = 0; k < n_layers_; ++k) {
        flatten_into(gW[k], grad, ofs);
        flatten_into(gb[k], grad, ofs);
    }
    flatten_into(gWo, grad, ofs);
    flatten_into(gbo, grad, ofs);
    return grad;
}

// ===== Factory and checkpoints ==============================================

std::unique_ptr<FeedforwardNetwork> make_network(const std::string& architecture, int n_in,
                                                 int n_out, int n_layers, int width) {
    if (architecture == "skip") return std::make_unique<SkipNetwork>(n_in, n_out, n_layers, width);
    if (architecture == "dense")
        return std::make_unique<DenseNetwork>(n_in, n_out, n_layers, width);
    throw std::invalid_argument("unknown architecture: " + architecture);
}

void save_network(const FeedforwardNetwork& net, const std::string& path) {
    std::ostringstream out;
    out << "pincwell-net 1\n";
    out << net.architecture() << ' ' << net.input_dim() << ' ' << net.output_dim() << ' '
        << net.n_layers() << ' ' << net.width() << '\n';
    const Vec theta = net.get_parameters();
    out << theta.size() << '\n';
    for (long i = 0; i < theta.size(); ++i) out << format_double(theta(i)) << '\n';
    atomic_write_file(path, out.str());
}

std::unique_ptr<FeedforwardNetwork> load_network(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "pincwell-net" || version != 1)
        throw std::runtime_error("unrecognized network checkpoint: " + path);
    std::string arch;
    int n_in = 0, n_out = 0, n_layers = 0, width = 0;
    long count = 0;
    in >> arch >> n_in >> n_out >> n_layers >> width >> count;
    auto net = make_network(arch, n_in, n_out, n_layers, width);
    if (count != net->n_params())
        throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    Vec theta(count);
    for (long i = 0; i < count; ++i) {
        if (!(in >> theta(i))) throw std::runtime_error("truncated network checkpoint: " + path);
    }
    net->set_parameters(theta);
    return net;
}

}  // namespace pincwell
