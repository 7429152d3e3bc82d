#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pam/tensor.hpp"

namespace pam {

/// Square-kernel 2-D convolution geometry. `kernel_size` is the spatial
/// extent of the filter; it has nothing to do with the gate slope.
struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_size = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
    bool has_bias = false;

    static ConvSpec depthwise(std::size_t channels, std::size_t kernel = 3, std::size_t stride = 1,
                              std::size_t padding = 1);

    /// Throws ShapeError unless the channel/group arithmetic is consistent.
    void validate() const;
    std::size_t output_extent(std::size_t input_extent) const;
    Shape weight_shape() const;
    bool is_depthwise() const { return groups == in_channels && groups == out_channels; }
};

enum class Mode { train, eval };

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;
    Mode mode = Mode::train;

    /// gamma = 1, beta = 0, running stats (0, 1).
    static BatchNormState make(std::size_t channels);
    std::size_t channels() const { return running_mean.size(); }
};

enum class PoolKind { avg, max };

Tensor conv2d(const Tensor& x, const Tensor& weights, const std::optional<Tensor>& bias, const ConvSpec& spec);

/// Per-channel normalization over (batch, height, width). Train mode also
/// updates the running statistics (unbiased variance) in `state`.
Tensor batch_norm(const Tensor& x, BatchNormState& state);

/// Channelwise leaky slope; the channel axis is 1 for both rank-2 and rank-4.
Tensor prelu(const Tensor& x, const Tensor& slopes);
Tensor relu(const Tensor& x);

Tensor global_pool(const Tensor& x, PoolKind kind);

/// x * W^T + b with W shaped (out, in).
Tensor affine(const Tensor& x, const Tensor& weights, const std::optional<Tensor>& bias);

Tensor add(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double factor);
/// Multiplies every value of sample b by s[b]; `s` carries no gradient.
Tensor scale_per_sample(const Tensor& x, std::span<const double> s);
/// x (B, C, H, W) times a (B, C) broadcast over space.
Tensor mul_channels(const Tensor& x, const Tensor& a);
Tensor sigmoid(const Tensor& x);
/// Row-wise unit-norm rescaling of a rank-2 tensor.
Tensor l2_normalize(const Tensor& x);
/// (B, C, H, W) -> (B, C*H*W).
Tensor flatten(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean softmax cross-entropy of rank-2 logits against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

} // namespace pam
