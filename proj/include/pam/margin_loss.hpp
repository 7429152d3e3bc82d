#pragma once

#include <cstddef>
#include <span>

#include "pam/tensor.hpp"

namespace pam {

/// Additive angular margin: the target logit is s*cos(theta + m), the
/// others s*cos(theta).
struct MarginConfig {
    double scale = 64.0;
    double margin = 0.5;

    /// Requires s > 0 and 0 <= m < pi/2.
    void validate() const;
};

struct MarginDiagnostics {
    /// Target angles with theta + m >= pi; their logit is held at -s.
    std::size_t clamped = 0;
};

/// Logits from a (batch, classes) cosine matrix.
Tensor margin_logits(const Tensor& cosines, std::span<const std::size_t> labels, const MarginConfig& cfg,
                     MarginDiagnostics* diagnostics = nullptr);

/// Mean cross-entropy over margin logits. Embedding rows and class-weight
/// rows must already have unit norm (within 1e-6).
Tensor margin_loss(const Tensor& embeddings, const Tensor& class_weights, std::span<const std::size_t> labels,
                   const MarginConfig& cfg, MarginDiagnostics* diagnostics = nullptr);

} // namespace pam
