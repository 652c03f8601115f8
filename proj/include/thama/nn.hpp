// Layer-level building blocks: 1-D convolution, max pooling, dense layers,
// inverted dropout, binary cross-entropy, and the weight initializers.
// These are plain tensor functions; the compute graph routes through the same
// kernels, so both views of an operation agree by construction.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "thama/kernels.hpp"
#include "thama/rng.hpp"
#include "thama/tensor.hpp"

namespace thama::nn {

template <typename S>
struct Conv1DLayerT {
    TensorT<S> kernels; // [out_channels x in_channels x width]
    TensorT<S> bias;    // [out_channels]
};
using Conv1DLayer = Conv1DLayerT<float>;

template <typename S>
struct DenseLayerT {
    TensorT<S> weights; // [in_dim x out_dim]
    TensorT<S> bias;    // [out_dim]
};
using DenseLayer = DenseLayerT<float>;

enum class DropoutMode { Training, Inference };

struct DropoutSpec {
    float rate = 0.0f;
    DropoutMode mode = DropoutMode::Inference;
};

// Cross-correlation with zero same-padding; output length equals input length.
template <typename S>
TensorT<S> conv1d(const TensorT<S>& input, const Conv1DLayerT<S>& layer) {
    if (input.rank() != 2)
        throw ShapeError("conv1d: input must be [channels x length], got " +
                         shape_str(input.shape()));
    if (layer.kernels.rank() != 3 || layer.bias.rank() != 1 ||
        layer.bias.extent(0) != layer.kernels.extent(0))
        throw ShapeError("conv1d: malformed layer tensors");
    if (layer.kernels.extent(2) % 2 == 0)
        throw ShapeError("conv1d: kernel width must be odd");
    if (input.extent(0) != layer.kernels.extent(1))
        throw ShapeError("conv1d: input has " + std::to_string(input.extent(0)) +
                         " channels, layer expects " +
                         std::to_string(layer.kernels.extent(1)));
    TensorT<S> out({layer.kernels.extent(0), input.extent(1)});
    std::vector<S> s1, s2;
    kernels::conv1d_fwd(std::size_t{1}, input.extent(0), input.extent(1),
                        layer.kernels.extent(0), layer.kernels.extent(2),
                        input.data(), layer.kernels.data(), layer.bias.data(),
                        out.data(), s1, s2);
    return out;
}

// Non-overlapping windows of `pool`, stride `pool`; a trailing remainder
// shorter than the window is dropped.
template <typename S>
TensorT<S> maxpool1d(const TensorT<S>& input, std::size_t pool = 2) {
    if (input.rank() != 2)
        throw ShapeError("maxpool1d: input must be [channels x length]");
    if (input.extent(1) < pool)
        throw ShapeError("maxpool1d: length " + std::to_string(input.extent(1)) +
                         " shorter than pool " + std::to_string(pool));
    TensorT<S> out({input.extent(0), input.extent(1) / pool});
    std::vector<std::uint32_t> argmax(out.numel());
    kernels::maxpool1d_fwd(std::size_t{1}, input.extent(0), input.extent(1), pool,
                           input.data(), out.data(), argmax.data());
    return out;
}

// y = W^T x + b with W stored [in_dim x out_dim].
template <typename S>
TensorT<S> dense(const TensorT<S>& x, const DenseLayerT<S>& layer) {
    if (x.rank() != 1 || layer.weights.rank() != 2)
        throw ShapeError("dense: expects a vector input and a rank-2 weight matrix");
    if (x.extent(0) != layer.weights.extent(0))
        throw ShapeError("dense: input dim " + std::to_string(x.extent(0)) +
                         " vs weight rows " + std::to_string(layer.weights.extent(0)));
    if (layer.bias.shape() != Shape{layer.weights.extent(1)})
        throw ShapeError("dense: bias shape mismatch");
    TensorT<S> out({layer.weights.extent(1)});
    kernels::linear_fwd(std::size_t{1}, x.extent(0), out.extent(0), x.data(),
                        layer.weights.data(), out.data());
    for (std::size_t o = 0; o < out.numel(); ++o) out[o] += layer.bias[o];
    return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    kernels::relu_fwd(x.numel(), x.data(), out.data());
    return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    kernels::sigmoid_fwd(x.numel(), x.data(), out.data());
    return out;
}

// Inference mode is the identity; training mode zeroes elements with
// probability `rate` and scales survivors by 1/(1-rate).
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, const DropoutSpec& spec, Rng& rng) {
    if (spec.rate < 0.0f || spec.rate >= 1.0f)
        throw ShapeError("dropout: rate must lie in [0, 1)");
    if (spec.mode == DropoutMode::Inference || spec.rate == 0.0f) return x;
    TensorT<S> out(x.shape());
    std::vector<std::uint8_t> mask(x.numel());
    kernels::dropout_sample(x.numel(), spec.rate, x.data(), out.data(), mask.data(), rng);
    return out;
}

// Mean binary cross-entropy over a batch of probabilities; probabilities are
// clamped to [1e-7, 1-1e-7] before the logarithms.
template <typename S>
double bce(std::span<const S> probabilities, std::span<const S> labels) {
    if (probabilities.size() != labels.size() || probabilities.empty())
        throw ShapeError("bce: probability and label spans must be non-empty and aligned");
    std::vector<double> p(probabilities.begin(), probabilities.end());
    std::vector<double> y(labels.begin(), labels.end());
    return kernels::bce_fwd(p.size(), p.data(), y.data());
}

// ---------------------------------------------------------------------------
// Initialization. He-uniform for layers feeding ReLU, Glorot-uniform for
// projections, cores, and the output layer; biases start at zero.
// ---------------------------------------------------------------------------

inline double he_uniform_bound(std::size_t fan_in) {
    return std::sqrt(6.0 / static_cast<double>(fan_in));
}

inline double glorot_uniform_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename S>
void fill_he_uniform(TensorT<S>& t, std::size_t fan_in, Rng& rng) {
    const double b = he_uniform_bound(fan_in);
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<S>(rng.uniform(-b, b));
}

template <typename S>
void fill_glorot_uniform(TensorT<S>& t, std::size_t fan_in, std::size_t fan_out,
                         Rng& rng) {
    const double b = glorot_uniform_bound(fan_in, fan_out);
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<S>(rng.uniform(-b, b));
}

} // namespace thama::nn
