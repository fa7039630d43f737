#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pincwell/types.hpp"

namespace pincwell {

// ===== Network interface =====================================================
//
// Batched feedforward networks with tanh hidden activations and a linear
// output. Reverse-mode parameter gradients are computed from a recorded tape;
// a forward-mode tangent in one input coordinate can be carried along, and
// the reverse pass then also differentiates losses that depend on that
// tangent (reverse-over-forward). Columns are batch members throughout.

/// Opaque record of one forward pass (optionally with input tangent).
struct ForwardTape {
    virtual ~ForwardTape() = default;
    virtual const Mat& y() const = 0;     ///< outputs, n_out x B
    virtual const Mat& ydot() const = 0;  ///< output tangents; throws if no tangent recorded
    virtual bool has_tangent() const = 0;
};

/// Contiguous slice of the flat parameter vector belonging to one layer.
struct LayerSlice {
    std::string name;
    long offset = 0;
    long size = 0;
};

class FeedforwardNetwork {
public:
    virtual ~FeedforwardNetwork() = default;

    virtual std::string architecture() const = 0;  ///< "skip" or "dense"
    virtual int input_dim() const = 0;
    virtual int output_dim() const = 0;
    virtual int n_layers() const = 0;
    virtual int width() const = 0;
    virtual long n_params() const = 0;

    /// Flat parameter vector in canonical order: for "skip" both input
    /// encoders (weights then bias each), then every hidden layer, then the
    /// output layer; for "dense" the hidden layers then the output layer.
    virtual Vec get_parameters() const = 0;
    virtual void set_parameters(const Vec& theta) = 0;
    virtual std::vector<LayerSlice> parameter_layout() const = 0;

    /// Glorot-uniform weights (biases zero), deterministic in seed.
    virtual void init_glorot(uint64_t seed) = 0;

    virtual std::unique_ptr<FeedforwardNetwork> clone() const = 0;

    /// Records a forward pass; Xdot (same shape as X) carries an input
    /// tangent through the network when given.
    virtual std::unique_ptr<ForwardTape> record(const Mat& X,
                                                const Mat* Xdot = nullptr) const = 0;

    /// Gradient of  sum(Ybar .* y) + sum(Ydotbar .* ydot)  with respect to
    /// the parameters; optionally also with respect to X (accumulated into
    /// *x_bar). Ydotbar requires a tangent-carrying tape.
    virtual Vec backward(const ForwardTape& tape, const Mat& Ybar,
                         const Mat* Ydotbar = nullptr, Mat* x_bar = nullptr) const = 0;

    // --- convenience wrappers
    Mat forward(const Mat& X) const { return record(X)->y(); }
    Vec forward(const Vec& x) const;
    void forward_with_time_tangent(const Mat& X, Mat& Y, Mat& Ydot) const;

    /// Mean absolute entry of `grad` per layer slice (ablation diagnostic).
    std::vector<double> layer_mean_abs(const Vec& grad) const;
};

// ===== Architectures =========================================================

/// Two tanh input encoders U and V gate every hidden layer:
///   u = tanh(W_u x + b_u),  v = tanh(W_v x + b_v),  a_0 = x,
///   z_k = tanh(W_k a_{k-1} + b_k),  a_k = u + z_k .* (v - u),
///   y = W_o a_L + b_o.
class SkipNetwork final : public FeedforwardNetwork {
public:
    SkipNetwork(int n_in, int n_out, int n_layers, int width);

    std::string architecture() const override { return "skip"; }
    int input_dim() const override { return n_in_; }
    int output_dim() const override { return n_out_; }
    int n_layers() const override { return n_layers_; }
    int width() const override { return width_; }
    long n_params() const override;
    Vec get_parameters() const override;
    void set_parameters(const Vec& theta) override;
    std::vector<LayerSlice> parameter_layout() const override;
    void init_glorot(uint64_t seed) override;
    std::unique_ptr<FeedforwardNetwork> clone() const override;
    std::unique_ptr<ForwardTape> record(const Mat& X, const Mat* Xdot) const override;
    Vec backward(const ForwardTape& tape, const Mat& Ybar, const Mat* Ydotbar,
                 Mat* x_bar) const override;

private:
    int n_in_, n_out_, n_layers_, width_;
    Mat Wu_, Wv_, Wo_;
    Vec bu_, bv_, bo_;
    std::vector<Mat> Wz_;  // layer k: width x (k == 0 ? n_in : width)
    std::vector<Vec> bz_;
};

/// Plain chain of tanh layers (the ablation baseline):
///   a_k = tanh(W_k a_{k-1} + b_k),  y = W_o a_L + b_o.
class DenseNetwork final : public FeedforwardNetwork {
public:
    DenseNetwork(int n_in, int n_out, int n_layers, int width);

    std::string architecture() const override { return "dense"; }
    int input_dim() const override { return n_in_; }
    int output_dim() const override { return n_out_; }
    int n_layers() const override { return n_layers_; }
    int width() const override { return width_; }
    long n_params() const override;
    Vec get_parameters() const override;
    void set_parameters(const Vec& theta) override;
    std::vector<LayerSlice> parameter_layout() const override;
    void init_glorot(uint64_t seed) override;
    std::unique_ptr<FeedforwardNetwork> clone() const override;
    std::unique_ptr<ForwardTape> record(const Mat& X, const Mat* Xdot) const override;
    Vec backward(const ForwardTape& tape, const Mat& Ybar, const Mat* Ydotbar,
                 Mat* x_bar) const override;

private:
    int n_in_, n_out_, n_layers_, width_;
    std::vector<Mat> W_;
    std::vector<Vec> b_;
    Mat Wo_;
    Vec bo_;
};

/// Builds a zero-initialized network of the given architecture tag.
std::unique_ptr<FeedforwardNetwork> make_network(const std::string& architecture, int n_in,
                                                 int n_out, int n_layers, int width);

// ===== Checkpoints ===========================================================

/// Versioned text checkpoint: header (version, architecture, dimensions)
/// followed by the flat parameters in canonical order. Atomic.
void save_network(const FeedforwardNetwork& net, const std::string& path);
std::unique_ptr<FeedforwardNetwork> load_network(const std::string& path);

}  // namespace pincwell
