#include "pam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pam {

using detail::Node;
using detail::make_result;

namespace {

void require(bool condition, const std::string& message)
{
    if (!condition)
        throw ShapeError(message);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg)
{
    require(t.rank() == rank, std::string(op) + ": " + arg + " must be rank " + std::to_string(rank) +
                                  ", got shape " + to_string(t.shape()));
}

bool wants_grad(const Tensor& t)
{
    return t.node()->requires_grad;
}

std::vector<double>& grad_of(const Tensor& t)
{
    return t.node()->grad_buffer();
}

// Extent of everything after the channel axis (1 for rank-2 tensors).
std::size_t inner_extent(const Tensor& x)
{
    std::size_t n = 1;
    for (std::size_t i = 2; i < x.rank(); ++i)
        n *= x.dim(i);
    return n;
}

// Convolution as per-group matrix products over an unfolded input. The
// unfolded matrix has one row per (input channel, kh, kw) tap and one column
// per (batch, oh, ow) output position, so a single product covers the batch.
struct ConvGeometry {
    std::size_t batch, cin, cout, groups, cin_g, cout_g, in_h, in_w, out_h, out_w, k, stride, pad;
    // Valid output columns for kernel column kw: 0 <= ow*stride + kw - pad < in_w.
    std::vector<std::size_t> col_lo, col_hi;

    ConvGeometry(const ConvSpec& spec, std::size_t batch_, std::size_t in_h_, std::size_t in_w_)
        : batch(batch_), cin(spec.in_channels), cout(spec.out_channels), groups(spec.groups),
          cin_g(spec.in_channels / spec.groups), cout_g(spec.out_channels / spec.groups), in_h(in_h_), in_w(in_w_),
          out_h(spec.output_extent(in_h_)), out_w(spec.output_extent(in_w_)), k(spec.kernel_size),
          stride(spec.stride), pad(spec.padding), col_lo(k), col_hi(k)
    {
        for (std::size_t kw = 0; kw < k; ++kw) {
            col_lo[kw] = std::min(out_w, kw >= pad ? 0 : (pad - kw + stride - 1) / stride);
            const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in_w + pad) - 1 - static_cast<std::ptrdiff_t>(kw);
            col_hi[kw] = last < 0 ? 0 : std::min(out_w, static_cast<std::size_t>(last) / stride + 1);
            col_hi[kw] = std::max(col_hi[kw], col_lo[kw]);
        }
    }

    std::size_t taps() const { return cin_g * k * k; }

    // Samples per unfolded chunk, sized to keep the chunk cache-resident.
    std::size_t chunk_samples() const
    {
        const std::size_t per_sample = taps() * out_h * out_w;
        return std::clamp<std::size_t>(32768 / std::max<std::size_t>(per_sample, 1), 1, batch);
    }

    // Visits (column offset, input row offset or npos, kw) for every row
    // segment of the unfolded chunk [b0, b1); npos marks padding rows.
    template <typename Body>
    void for_each_row(std::size_t group, std::size_t b0, std::size_t b1, Body&& body) const
    {
        const std::size_t n_cols = (b1 - b0) * out_h * out_w;
        for (std::size_t icg = 0; icg < cin_g; ++icg)
            for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw) {
                    const std::size_t tap = (icg * k + kh) * k + kw;
                    for (std::size_t b = b0; b < b1; ++b) {
                        const std::size_t plane = (b * cin + group * cin_g + icg) * in_h * in_w;
                        for (std::size_t oh = 0; oh < out_h; ++oh) {
                            const std::size_t dst = tap * n_cols + ((b - b0) * out_h + oh) * out_w;
                            const std::size_t row = oh * stride + kh;
                            if (row < pad || row - pad >= in_h)
                                body(dst, npos, kw);
                            else
                                body(dst, plane + (row - pad) * in_w, kw);
                        }
                    }
                }
    }

    void unfold(const double* x, std::size_t group, std::size_t b0, std::size_t b1, std::vector<double>& col) const
    {
        col.resize(taps() * (b1 - b0) * out_h * out_w);
        for_each_row(group, b0, b1, [&](std::size_t dst, std::size_t src_row, std::size_t kw) {
            double* out = col.data() + dst;
            if (src_row == npos) {
                std::fill_n(out, out_w, 0.0);
                return;
            }
            const std::size_t lo = col_lo[kw], hi = col_hi[kw];
            const std::size_t base = src_row + kw - pad; // unsigned wrap cancels below
            std::fill_n(out, lo, 0.0);
            for (std::size_t ow = lo; ow < hi; ++ow)
                out[ow] = x[base + ow * stride];
            std::fill_n(out + hi, out_w - hi, 0.0);
        });
    }

    void fold_add(const std::vector<double>& col, std::size_t group, std::size_t b0, std::size_t b1, double* gx) const
    {
        for_each_row(group, b0, b1, [&](std::size_t src, std::size_t dst_row, std::size_t kw) {
            if (dst_row == npos)
                return;
            const std::size_t base = dst_row + kw - pad;
            for (std::size_t ow = col_lo[kw]; ow < col_hi[kw]; ++ow)
                gx[base + ow * stride] += col[src + ow];
        });
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

double dot(const double* a, const double* b, std::size_t n)
{
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i)
        s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

} // namespace

ConvSpec ConvSpec::depthwise(std::size_t channels, std::size_t kernel, std::size_t stride, std::size_t padding)
{
    return ConvSpec{channels, channels, kernel, stride, padding, channels, false};
}

void ConvSpec::validate() const
{
    require(in_channels > 0 && out_channels > 0, "conv2d: channel counts must be positive");
    require(kernel_size > 0, "conv2d: kernel_size must be positive");
    require(stride > 0, "conv2d: stride must be positive");
    require(groups > 0, "conv2d: groups must be positive");
    require(in_channels % groups == 0,
            "conv2d: groups " + std::to_string(groups) + " does not divide in_channels " + std::to_string(in_channels));
    require(out_channels % groups == 0, "conv2d: groups " + std::to_string(groups) + " does not divide out_channels " +
                                            std::to_string(out_channels));
}

std::size_t ConvSpec::output_extent(std::size_t input_extent) const
{
    const std::size_t padded = input_extent + 2 * padding;
    require(padded >= kernel_size, "conv2d: kernel " + std::to_string(kernel_size) + " exceeds padded input extent " +
                                       std::to_string(padded));
    return (padded - kernel_size) / stride + 1;
}

Shape ConvSpec::weight_shape() const
{
    return {out_channels, in_channels / groups, kernel_size, kernel_size};
}

BatchNormState BatchNormState::make(std::size_t channels)
{
    BatchNormState s;
    s.gamma = Tensor::full({channels}, 1.0, true);
    s.beta = Tensor::zeros({channels}, true);
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    return s;
}

Tensor conv2d(const Tensor& x, const Tensor& weights, const std::optional<Tensor>& bias, const ConvSpec& spec)
{
    spec.validate();
    require_rank(x, 4, "conv2d", "input");
    require(x.dim(1) == spec.in_channels, "conv2d: input channel extent " + std::to_string(x.dim(1)) +
                                              " does not match in_channels " + std::to_string(spec.in_channels));
    require(weights.shape() == spec.weight_shape(), "conv2d: weights shaped " + to_string(weights.shape()) +
                                                        ", expected " + to_string(spec.weight_shape()));
    require(bias.has_value() == spec.has_bias, "conv2d: bias presence does not match has_bias");
    if (bias)
        require(bias->shape() == Shape{spec.out_channels}, "conv2d: bias shaped " + to_string(bias->shape()) +
                                                               ", expected (" + std::to_string(spec.out_channels) + ")");

    const ConvGeometry geo(spec, x.dim(0), x.dim(2), x.dim(3));
    const std::size_t batch = geo.batch, cout = geo.cout, plane = geo.out_h * geo.out_w;
    const std::size_t taps = geo.taps(), chunk = geo.chunk_samples();

    std::vector<double> out(batch * cout * plane, 0.0);
    std::vector<double> col, prod;
    const double* wv = weights.data().data();
    for (std::size_t g = 0; g < geo.groups; ++g)
        for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
            const std::size_t b1 = std::min(batch, b0 + chunk), n_cols = (b1 - b0) * plane;
            geo.unfold(x.data().data(), g, b0, b1, col);
            prod.assign(geo.cout_g * n_cols, 0.0);
            for (std::size_t m = 0; m < geo.cout_g; ++m) {
                double* dst = prod.data() + m * n_cols;
                const double* wrow = wv + (g * geo.cout_g + m) * taps;
                for (std::size_t t = 0; t < taps; ++t) {
                    const double w = wrow[t];
                    const double* src = col.data() + t * n_cols;
                    for (std::size_t n = 0; n < n_cols; ++n)
                        dst[n] += w * src[n];
                }
            }
            for (std::size_t m = 0; m < geo.cout_g; ++m) {
                const std::size_t oc = g * geo.cout_g + m;
                const double bias_v = bias ? bias->data()[oc] : 0.0;
                for (std::size_t b = b0; b < b1; ++b)
                    for (std::size_t p = 0; p < plane; ++p)
                        out[(b * cout + oc) * plane + p] = prod[m * n_cols + (b - b0) * plane + p] + bias_v;
            }
        }

    const Shape out_shape{batch, cout, geo.out_h, geo.out_w};
    std::vector<Tensor> inputs{x, weights};
    if (bias)
        inputs.push_back(*bias);
    return make_result(out_shape, std::move(out), std::move(inputs), [=](Node& self) {
        const double* go = self.grad.data();
        double* gx = wants_grad(x) ? grad_of(x).data() : nullptr;
        double* gw = wants_grad(weights) ? grad_of(weights).data() : nullptr;
        const double* wd = weights.data().data();
        std::vector<double> col, gout, gcol;
        for (std::size_t g = 0; g < geo.groups; ++g)
            for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
                const std::size_t b1 = std::min(batch, b0 + chunk), n_cols = (b1 - b0) * plane;
                gout.resize(geo.cout_g * n_cols);
                for (std::size_t m = 0; m < geo.cout_g; ++m) {
                    const std::size_t oc = g * geo.cout_g + m;
                    for (std::size_t b = b0; b < b1; ++b)
                        std::copy_n(go + (b * cout + oc) * plane, plane,
                                    gout.begin() + static_cast<std::ptrdiff_t>(m * n_cols + (b - b0) * plane));
                }
                if (gw) {
                    geo.unfold(x.data().data(), g, b0, b1, col);
                    for (std::size_t m = 0; m < geo.cout_g; ++m)
                        for (std::size_t t = 0; t < taps; ++t)
                            gw[(g * geo.cout_g + m) * taps + t] +=
                                dot(gout.data() + m * n_cols, col.data() + t * n_cols, n_cols);
                }
                if (gx) {
                    gcol.assign(taps * n_cols, 0.0);
                    for (std::size_t m = 0; m < geo.cout_g; ++m) {
                        const double* grow = gout.data() + m * n_cols;
                        const double* wrow = wd + (g * geo.cout_g + m) * taps;
                        for (std::size_t t = 0; t < taps; ++t) {
                            const double w = wrow[t];
                            double* dst = gcol.data() + t * n_cols;
                            for (std::size_t n = 0; n < n_cols; ++n)
                                dst[n] += w * grow[n];
                        }
                    }
                    geo.fold_add(gcol, g, b0, b1, gx);
                }
            }
        if (bias && wants_grad(*bias)) {
            auto& gb = grad_of(*bias);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p)
                        acc += go[(b * cout + oc) * plane + p];
                    gb[oc] += acc;
                }
        }
    });
}

Tensor batch_norm(const Tensor& x, BatchNormState& state)
{
    require(x.rank() == 2 || x.rank() == 4, "batch_norm: input must be rank 2 or 4, got shape " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1), inner = inner_extent(x);
    require(channels == state.channels(), "batch_norm: channel extent " + std::to_string(channels) +
                                              " does not match state channels " + std::to_string(state.channels()));
    require(state.gamma.shape() == Shape{channels} && state.beta.shape() == Shape{channels},
            "batch_norm: gamma/beta must have one entry per channel");
    require(state.epsilon > 0.0, "batch_norm: epsilon must be positive");
    const bool training = state.mode == Mode::train;
    const std::size_t count = batch * inner;
    if (training)
        require(count >= 2, "batch_norm: train mode needs at least two values per channel");

    const auto xv = x.data();
    const auto gamma = state.gamma.data();
    const auto beta = state.beta.data();
    std::vector<double> mean(channels), inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        if (training) {
            double m = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < inner; ++i)
                    m += xv[(b * channels + c) * inner + i];
            m /= static_cast<double>(count);
            double v = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < inner; ++i) {
                    const double d = xv[(b * channels + c) * inner + i] - m;
                    v += d * d;
                }
            v /= static_cast<double>(count);
            mean[c] = m;
            inv_std[c] = 1.0 / std::sqrt(v + state.epsilon);
            const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            require(state.running_var[c] >= 0.0, "batch_norm: negative running variance");
            mean[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
        }
    }

    std::vector<double> xhat(xv.size()), out(xv.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (b * channels + c) * inner + i;
                xhat[idx] = (xv[idx] - mean[c]) * inv_std[c];
                out[idx] = gamma[c] * xhat[idx] + beta[c];
            }

    Tensor gamma_t = state.gamma, beta_t = state.beta;
    return make_result(x.shape(), std::move(out), {x, gamma_t, beta_t},
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& go = self.grad;
                           const auto gam = gamma_t.data();
                           std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t c = 0; c < channels; ++c)
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       const std::size_t idx = (b * channels + c) * inner + i;
                                       sum_g[c] += go[idx];
                                       sum_gx[c] += go[idx] * xhat[idx];
                                   }
                           if (wants_grad(gamma_t)) {
                               auto& gg = grad_of(gamma_t);
                               for (std::size_t c = 0; c < channels; ++c)
                                   gg[c] += sum_gx[c];
                           }
                           if (wants_grad(beta_t)) {
                               auto& gb = grad_of(beta_t);
                               for (std::size_t c = 0; c < channels; ++c)
                                   gb[c] += sum_g[c];
                           }
                           if (!wants_grad(x))
                               return;
                           auto& gx = grad_of(x);
                           const double n = static_cast<double>(count);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t c = 0; c < channels; ++c)
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       const std::size_t idx = (b * channels + c) * inner + i;
                                       const double scale = gam[c] * inv_std[c];
                                       if (training)
                                           gx[idx] += scale * (go[idx] - sum_g[c] / n - xhat[idx] * sum_gx[c] / n);
                                       else
                                           gx[idx] += scale * go[idx];
                                   }
                       });
}

Tensor prelu(const Tensor& x, const Tensor& slopes)
{
    require(x.rank() == 2 || x.rank() == 4, "prelu: input must be rank 2 or 4, got shape " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1), inner = inner_extent(x);
    require(slopes.shape() == Shape{channels}, "prelu: " + std::to_string(slopes.numel()) +
                                                   " slopes for channel extent " + std::to_string(channels));
    const auto xv = x.data();
    const auto a = slopes.data();
    std::vector<double> out(xv.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (b * channels + c) * inner + i;
                out[idx] = xv[idx] >= 0.0 ? xv[idx] : a[c] * xv[idx];
            }
    return make_result(x.shape(), std::move(out), {x, slopes}, [=](Node& self) {
        const auto& go = self.grad;
        const auto xd = x.data();
        const auto ad = slopes.data();
        double* gx = wants_grad(x) ? grad_of(x).data() : nullptr;
        double* ga = wants_grad(slopes) ? grad_of(slopes).data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t idx = (b * channels + c) * inner + i;
                    const bool positive = xd[idx] >= 0.0;
                    if (gx)
                        gx[idx] += positive ? go[idx] : ad[c] * go[idx];
                    if (ga && !positive) {
#ifdef PAM_INJECT_GRAD_FAULT
                        ga[c] -= go[idx] * xd[idx];
#else
                        ga[c] += go[idx] * xd[idx];
#endif
                    }
                }
    });
}

Tensor relu(const Tensor& x)
{
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return make_result(x.shape(), std::move(out), {x}, [x](Node& self) {
        auto& gx = grad_of(x);
        const auto xd = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xd[i] > 0.0)
                gx[i] += self.grad[i];
    });
}

Tensor global_pool(const Tensor& x, PoolKind kind)
{
    require_rank(x, 4, "global_pool", "input");
    const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    const auto xv = x.data();
    std::vector<double> out(batch * channels);
    std::vector<std::size_t> argmax(kind == PoolKind::max ? batch * channels : 0);
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double* p = xv.data() + bc * plane;
        if (kind == PoolKind::avg) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i)
                acc += p[i];
            out[bc] = acc / static_cast<double>(plane);
        } else {
            std::size_t best = 0;
            for (std::size_t i = 1; i < plane; ++i)
                if (p[i] > p[best])
                    best = i;
            argmax[bc] = best;
            out[bc] = p[best];
        }
    }
    return make_result({batch, channels}, std::move(out), {x},
                       [=, argmax = std::move(argmax)](Node& self) {
                           auto& gx = grad_of(x);
                           for (std::size_t bc = 0; bc < batch * channels; ++bc) {
                               if (kind == PoolKind::avg) {
                                   const double g = self.grad[bc] / static_cast<double>(plane);
                                   for (std::size_t i = 0; i < plane; ++i)
                                       gx[bc * plane + i] += g;
                               } else {
                                   gx[bc * plane + argmax[bc]] += self.grad[bc];
                               }
                           }
                       });
}

Tensor affine(const Tensor& x, const Tensor& weights, const std::optional<Tensor>& bias)
{
    require_rank(x, 2, "affine", "input");
    require_rank(weights, 2, "affine", "weights");
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weights.dim(0);
    require(weights.dim(1) == in, "affine: weights inner dimension " + std::to_string(weights.dim(1)) +
                                      " does not match input features " + std::to_string(in));
    if (bias)
        require(bias->shape() == Shape{out_dim}, "affine: bias shaped " + to_string(bias->shape()) + ", expected (" +
                                                     std::to_string(out_dim) + ")");
    const auto xv = x.data();
    const auto wv = weights.data();
    std::vector<double> out(batch * out_dim);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bias ? bias->data()[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i)
                acc += xv[b * in + i] * wv[o * in + i];
            out[b * out_dim + o] = acc;
        }
    std::vector<Tensor> inputs{x, weights};
    if (bias)
        inputs.push_back(*bias);
    return make_result({batch, out_dim}, std::move(out), std::move(inputs), [=](Node& self) {
        const auto& go = self.grad;
        const auto xd = x.data();
        const auto wd = weights.data();
        if (wants_grad(x)) {
            auto& gx = grad_of(x);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double g = go[b * out_dim + o];
                    for (std::size_t i = 0; i < in; ++i)
                        gx[b * in + i] += g * wd[o * in + i];
                }
        }
        if (wants_grad(weights)) {
            auto& gw = grad_of(weights);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double g = go[b * out_dim + o];
                    for (std::size_t i = 0; i < in; ++i)
                        gw[o * in + i] += g * xd[b * in + i];
                }
        }
        if (bias && wants_grad(*bias)) {
            auto& gb = grad_of(*bias);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out_dim; ++o)
                    gb[o] += go[b * out_dim + o];
        }
    });
}

Tensor add(const Tensor& x, const Tensor& y)
{
    require(x.shape() == y.shape(), "add: shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) + " differ");
    const auto xv = x.data();
    const auto yv = y.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] + yv[i];
    return make_result(x.shape(), std::move(out), {x, y}, [x, y](Node& self) {
        for (const Tensor* t : {&x, &y})
            if (wants_grad(*t)) {
                auto& g = grad_of(*t);
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += self.grad[i];
            }
    });
}

Tensor mul(const Tensor& x, const Tensor& y)
{
    require(x.shape() == y.shape(), "mul: shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) + " differ");
    const auto xv = x.data();
    const auto yv = y.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] * yv[i];
    return make_result(x.shape(), std::move(out), {x, y}, [x, y](Node& self) {
        const auto xd = x.data();
        const auto yd = y.data();
        if (wants_grad(x)) {
            auto& g = grad_of(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * yd[i];
        }
        if (wants_grad(y)) {
            auto& g = grad_of(y);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * xd[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor)
{
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = factor * xv[i];
    return make_result(x.shape(), std::move(out), {x}, [x, factor](Node& self) {
        auto& g = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += factor * self.grad[i];
    });
}

Tensor scale_per_sample(const Tensor& x, std::span<const double> s)
{
    require(x.rank() >= 1, "scale_per_sample: input must have a batch axis");
    const std::size_t batch = x.dim(0);
    require(s.size() == batch, "scale_per_sample: " + std::to_string(s.size()) + " factors for batch " +
                                   std::to_string(batch));
    const std::size_t per = x.numel() / batch;
    const auto xv = x.data();
    std::vector<double> factors(s.begin(), s.end());
    std::vector<double> out(xv.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < per; ++i)
            out[b * per + i] = factors[b] * xv[b * per + i];
    return make_result(x.shape(), std::move(out), {x}, [=, factors = std::move(factors)](Node& self) {
        auto& g = grad_of(x);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < per; ++i)
                g[b * per + i] += factors[b] * self.grad[b * per + i];
    });
}

Tensor mul_channels(const Tensor& x, const Tensor& a)
{
    require_rank(x, 4, "mul_channels", "input");
    require_rank(a, 2, "mul_channels", "weights");
    const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    require(a.dim(0) == batch && a.dim(1) == channels, "mul_channels: weights shaped " + to_string(a.shape()) +
                                                           " do not match input " + to_string(x.shape()));
    const auto xv = x.data();
    const auto av = a.data();
    std::vector<double> out(xv.size());
    for (std::size_t bc = 0; bc < batch * channels; ++bc)
        for (std::size_t i = 0; i < plane; ++i)
            out[bc * plane + i] = av[bc] * xv[bc * plane + i];
    return make_result(x.shape(), std::move(out), {x, a}, [=](Node& self) {
        const auto xd = x.data();
        const auto ad = a.data();
        double* gx = wants_grad(x) ? grad_of(x).data() : nullptr;
        double* ga = wants_grad(a) ? grad_of(a).data() : nullptr;
        for (std::size_t bc = 0; bc < batch * channels; ++bc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double g = self.grad[bc * plane + i];
                if (gx)
                    gx[bc * plane + i] += ad[bc] * g;
                acc += g * xd[bc * plane + i];
            }
            if (ga)
                ga[bc] += acc;
        }
    });
}

Tensor sigmoid(const Tensor& x)
{
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    std::vector<double> y = out;
    return make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y)](Node& self) {
        auto& g = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Tensor l2_normalize(const Tensor& x)
{
    require_rank(x, 2, "l2_normalize", "input");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto xv = x.data();
    std::vector<double> norms(rows), out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
            ss += xv[r * cols + c] * xv[r * cols + c];
        require(ss > 0.0, "l2_normalize: row " + std::to_string(r) + " has zero norm");
        norms[r] = std::sqrt(ss);
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] = xv[r * cols + c] / norms[r];
    }
    std::vector<double> y = out;
    return make_result(x.shape(), std::move(out), {x},
                       [=, y = std::move(y), norms = std::move(norms)](Node& self) {
                           auto& gx = grad_of(x);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::size_t c = 0; c < cols; ++c)
                                   dot += y[r * cols + c] * self.grad[r * cols + c];
                               for (std::size_t c = 0; c < cols; ++c)
                                   gx[r * cols + c] += (self.grad[r * cols + c] - y[r * cols + c] * dot) / norms[r];
                           }
                       });
}

Tensor flatten(const Tensor& x)
{
    require_rank(x, 4, "flatten", "input");
    const std::size_t batch = x.dim(0);
    const std::vector<double> values(x.data().begin(), x.data().end());
    return make_result({batch, x.numel() / batch}, values, {x}, [x](Node& self) {
        auto& g = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& x)
{
    double acc = 0.0;
    for (double v : x.data())
        acc += v;
    return make_result({}, {acc}, {x}, [x](Node& self) {
        auto& g = grad_of(x);
        for (double& v : g)
            v += self.grad[0];
    });
}

Tensor mean(const Tensor& x)
{
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels)
{
    require_rank(logits, 2, "cross_entropy", "logits");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    require(labels.size() == batch, "cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                        std::to_string(batch));
    for (std::size_t label : labels)
        require(label < classes, "cross_entropy: label " + std::to_string(label) + " out of range for " +
                                     std::to_string(classes) + " classes");
    const auto z = logits.data();
    std::vector<double> probs(z.size());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = z.data() + b * classes;
        const double peak = *std::max_element(row, row + classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - peak);
            denom += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c)
            probs[b * classes + c] /= denom;
        loss += peak + std::log(denom) - row[labels[b]];
    }
    loss /= static_cast<double>(batch);
    std::vector<std::size_t> targets(labels.begin(), labels.end());
    return make_result({}, {loss}, {logits},
                       [=, probs = std::move(probs), targets = std::move(targets)](Node& self) {
                           auto& g = grad_of(logits);
                           const double scale = self.grad[0] / static_cast<double>(batch);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t c = 0; c < classes; ++c) {
                                   const double target = c == targets[b] ? 1.0 : 0.0;
                                   g[b * classes + c] += scale * (probs[b * classes + c] - target);
                               }
                       });
}

} // namespace pam
