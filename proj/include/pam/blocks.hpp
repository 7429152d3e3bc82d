#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pam/gradcheck.hpp"
#include "pam/ops.hpp"
#include "pam/random.hpp"

namespace pam {

/// Yaw-driven soft gate S(y) = 1 / (1 + exp(-k (|y| / 45 - 1))).
struct GateConfig {
    double k_slope = 10.0;
    double yaw_half_range = 45.0;
    static constexpr double yaw_limit = 90.0;
};

/// Throws std::invalid_argument for non-finite yaw or |yaw| > 90.
double soft_gate(double yaw_deg, const GateConfig& cfg = {});
std::vector<double> soft_gates(std::span<const double> yaw_deg, const GateConfig& cfg = {});

enum class ConvKind { depthwise, dense };
enum class CamVariant { se, cbam };

const char* to_string(ConvKind kind);
const char* to_string(CamVariant variant);

/// Sum of element counts over the trainable arrays.
std::size_t count_trainable(const std::vector<NamedTensor>& params);

/// Gated residual BN -> conv3x3 -> PReLU -> conv3x3 -> BN. The convolutions
/// are depthwise in the reference design and dense in the ablation variant.
/// make() sets the final BN scale to zero, so F(x) starts at zero.
struct DrmParams {
    std::size_t channels = 0;
    ConvKind conv_kind = ConvKind::depthwise;
    BatchNormState bn1;
    BatchNormState bn2;
    Tensor dconv1_w;
    Tensor dconv2_w;
    Tensor prelu_slopes;

    static DrmParams make(std::size_t channels, ConvKind kind, Rng& rng);
    ConvSpec conv_spec() const;
    std::vector<NamedTensor> parameters() const;
    void set_mode(Mode mode);
};

/// Channel attention over pooled statistics through a bias-free bottleneck
/// MLP (C -> C/r -> C) shared between the avg and max branches.
struct CamParams {
    std::size_t channels = 0;
    CamVariant variant = CamVariant::cbam;
    bool identity_mapping = false;
    std::size_t reduction = 16;
    Tensor mlp_w1;
    Tensor mlp_w2;

    static CamParams make(std::size_t channels, CamVariant variant, bool identity_mapping, std::size_t reduction,
                          Rng& rng);
    std::vector<NamedTensor> parameters() const;
};

struct PamOptions {
    ConvKind conv_kind = ConvKind::depthwise;
    CamVariant cam_variant = CamVariant::cbam;
    bool cam_identity_mapping = false;
    std::size_t reduction = 16;
    bool use_drm = true;
    bool use_cam = true;
};

struct PamParams {
    std::size_t channels = 0;
    PamOptions options;
    std::optional<DrmParams> drm;
    std::optional<CamParams> cam;

    static PamParams make(std::size_t channels, const PamOptions& options, Rng& rng);
    std::vector<NamedTensor> parameters() const;
    void set_mode(Mode mode);
};

/// Embedding-space gated residual: e + g * (fc2(relu(fc1(e)))).
struct DreamParams {
    static constexpr std::size_t reference_dim = 512;
    std::size_t dim = reference_dim;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;

    static DreamParams make(std::size_t dim, Rng& rng);
    std::vector<NamedTensor> parameters() const;
};

/// The residual branch F(x) alone, without gate or identity.
Tensor drm_residual(const Tensor& x, DrmParams& p);
/// x + gate[b] * F(x).
Tensor drm_forward(const Tensor& x, DrmParams& p, std::span<const double> gate);

/// Attention weights a in (0,1), shaped (batch, channels).
Tensor cam_attention(const Tensor& x, const CamParams& p);
/// x * a, or x + x * a with identity mapping.
Tensor cam_forward(const Tensor& x, const CamParams& p);

Tensor pam_forward(const Tensor& x, DrmParams& drm, const CamParams& cam, std::span<const double> gate);
/// Honors the use_drm / use_cam ablation switches.
Tensor pam_forward(const Tensor& x, PamParams& p, std::span<const double> gate);

Tensor dream_forward(const Tensor& e, const DreamParams& p, std::span<const double> gate);

/// Closed-form trainable counts; used to cross-check the constructed arrays.
std::size_t drm_param_formula(std::size_t channels, ConvKind kind);
std::size_t cam_param_formula(std::size_t channels, std::size_t reduction);
std::size_t pam_param_formula(std::size_t channels, const PamOptions& options = {});
std::size_t dream_param_formula(std::size_t dim);

} // namespace pam
