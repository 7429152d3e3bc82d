#pragma once

#include <cmath>
#include <vector>

#include "pam/ops.hpp"
#include "pam/random.hpp"

namespace pam::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true)
{
    std::vector<double> v(numel(shape));
    for (double& x : v)
        x = uniform(rng, lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Direct-definition dense convolution: every output element is the explicit
// sum over its receptive field. Shares no code with pam::conv2d.
inline std::vector<double> naive_conv(const std::vector<double>& x, std::size_t batch, std::size_t cin, std::size_t h,
                                      std::size_t w, const std::vector<double>& kernel, std::size_t cout,
                                      std::size_t k, std::size_t stride, std::size_t pad, std::size_t& out_h,
                                      std::size_t& out_w)
{
    out_h = (h + 2 * pad - k) / stride + 1;
    out_w = (w + 2 * pad - k) / stride + 1;
    std::vector<double> y(batch * cout * out_h * out_w, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < out_h; ++i)
                for (std::size_t j = 0; j < out_w; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t p = 0; p < k; ++p)
                            for (std::size_t q = 0; q < k; ++q) {
                                const long r = static_cast<long>(i * stride + p) - static_cast<long>(pad);
                                const long s = static_cast<long>(j * stride + q) - static_cast<long>(pad);
                                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w))
                                    continue;
                                acc += kernel[((o * cin + c) * k + p) * k + q] *
                                       x[((b * cin + c) * h + static_cast<std::size_t>(r)) * w +
                                         static_cast<std::size_t>(s)];
                            }
                    y[((b * cout + o) * out_h + i) * out_w + j] = acc;
                }
    return y;
}

// Dense (C, C, k, k) kernel that is zero except the per-channel diagonal
// taken from a depthwise (C, 1, k, k) kernel.
inline std::vector<double> masked_dense_kernel(std::span<const double> depthwise, std::size_t channels, std::size_t k)
{
    std::vector<double> dense(channels * channels * k * k, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < k * k; ++t)
            dense[(c * channels + c) * k * k + t] = depthwise[c * k * k + t];
    return dense;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace pam::test
