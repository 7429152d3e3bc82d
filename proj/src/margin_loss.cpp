#include "pam/margin_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "pam/ops.hpp"

namespace pam {

namespace {

void require_unit_rows(const Tensor& t, const char* what)
{
    if (t.rank() != 2)
        throw ShapeError(std::string("margin_loss: ") + what + " must be rank 2, got " + to_string(t.shape()));
    const auto v = t.data();
    const std::size_t cols = t.dim(1);
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
            sq += v[r * cols + c] * v[r * cols + c];
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
            throw std::invalid_argument(std::string("margin_loss: ") + what + " row " + std::to_string(r) +
                                        " has norm " + std::to_string(std::sqrt(sq)) + ", expected 1");
    }
}

} // namespace

void MarginConfig::validate() const
{
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw std::invalid_argument("margin loss scale must be positive, got " + std::to_string(scale));
    if (!(margin >= 0.0) || !(margin < std::numbers::pi / 2))
        throw std::invalid_argument("margin must lie in [0, pi/2), got " + std::to_string(margin));
}

Tensor margin_logits(const Tensor& cosines, std::span<const std::size_t> labels, const MarginConfig& cfg,
                     MarginDiagnostics* diagnostics)
{
    cfg.validate();
    if (cosines.rank() != 2)
        throw ShapeError("margin_logits: cosines must be rank 2, got " + to_string(cosines.shape()));
    const std::size_t batch = cosines.dim(0), classes = cosines.dim(1);
    if (labels.size() != batch)
        throw ShapeError("margin_logits: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));

    const auto c = cosines.data();
    std::vector<double> out(c.size());
    // d logit / d cos, nonzero only where the margin changes the function.
    std::vector<double> slope(c.size());
    const double s = cfg.scale, m = cfg.margin;
    for (std::size_t i = 0; i < c.size(); ++i) {
        out[i] = s * c[i];
        slope[i] = s;
    }
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes)
            throw ShapeError("margin_logits: label " + std::to_string(labels[b]) + " out of range for " +
                             std::to_string(classes) + " classes");
        const std::size_t i = b * classes + labels[b];
        const double cos_t = std::clamp(c[i], -1.0, 1.0);
        const double theta = std::acos(cos_t);
        if (theta + m >= std::numbers::pi) {
            out[i] = -s;
            slope[i] = 0.0;
            if (diagnostics)
                ++diagnostics->clamped;
            continue;
        }
        out[i] = s * std::cos(theta + m);
        // d cos(theta + m) / d cos(theta) = cos m + cos(theta) sin m / sin(theta)
        const double sin_t = std::max(std::sqrt(1.0 - cos_t * cos_t), 1e-12);
        slope[i] = s * (std::cos(m) + cos_t * std::sin(m) / sin_t);
    }
    return detail::make_result(cosines.shape(), std::move(out), {cosines},
                               [cosines, slope = std::move(slope)](detail::Node& self) {
                                   auto& g = cosines.node()->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += slope[i] * self.grad[i];
                               });
}

Tensor margin_loss(const Tensor& embeddings, const Tensor& class_weights, std::span<const std::size_t> labels,
                   const MarginConfig& cfg, MarginDiagnostics* diagnostics)
{
    require_unit_rows(embeddings, "embedding");
    require_unit_rows(class_weights, "class weight");
    if (embeddings.dim(1) != class_weights.dim(1))
        throw ShapeError("margin_loss: embedding dimension " + std::to_string(embeddings.dim(1)) +
                         " differs from class weight dimension " + std::to_string(class_weights.dim(1)));
    const Tensor cosines = affine(embeddings, class_weights, std::nullopt);
    return cross_entropy(margin_logits(cosines, labels, cfg, diagnostics), labels);
}

} // namespace pam
