#include "pam/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace pam {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng)
{
    std::vector<double> values(numel(shape));
    for (double& v : values)
        v = uniform(rng, -bound, bound);
    return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    return uniform_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void append(std::vector<NamedTensor>& out, const std::string& prefix, const std::vector<NamedTensor>& params)
{
    for (const auto& p : params)
        out.push_back({prefix + p.name, p.tensor});
}

void check_gate(std::span<const double> gate, const Tensor& x, const char* op)
{
    if (gate.size() != x.dim(0))
        throw ShapeError(std::string(op) + ": " + std::to_string(gate.size()) + " gate values for batch " +
                         std::to_string(x.dim(0)));
}

} // namespace

double soft_gate(double yaw_deg, const GateConfig& cfg)
{
    if (!std::isfinite(yaw_deg) || std::abs(yaw_deg) > GateConfig::yaw_limit)
        throw std::invalid_argument("soft_gate: yaw " + std::to_string(yaw_deg) + " outside [-90, 90]");
    if (!(cfg.k_slope > 0.0) || !(cfg.yaw_half_range > 0.0))
        throw std::invalid_argument("soft_gate: slope and half range must be positive");
    const double z = cfg.k_slope * (std::abs(yaw_deg) / cfg.yaw_half_range - 1.0);
    return 1.0 / (1.0 + std::exp(-z));
}

std::vector<double> soft_gates(std::span<const double> yaw_deg, const GateConfig& cfg)
{
    std::vector<double> out;
    out.reserve(yaw_deg.size());
    for (double y : yaw_deg)
        out.push_back(soft_gate(y, cfg));
    return out;
}

const char* to_string(ConvKind kind)
{
    return kind == ConvKind::depthwise ? "depthwise" : "dense";
}

const char* to_string(CamVariant variant)
{
    return variant == CamVariant::cbam ? "cbam" : "se";
}

std::size_t count_trainable(const std::vector<NamedTensor>& params)
{
    std::size_t n = 0;
    for (const auto& p : params)
        if (p.tensor.requires_grad())
            n += p.tensor.numel();
    return n;
}

// ---------------------------------------------------------------- DRM

DrmParams DrmParams::make(std::size_t channels, ConvKind kind, Rng& rng)
{
    if (channels == 0)
        throw std::invalid_argument("DRM needs at least one channel");
    DrmParams p;
    p.channels = channels;
    p.conv_kind = kind;
    p.bn1 = BatchNormState::make(channels);
    p.bn2 = BatchNormState::make(channels);
    // Zero output scale: a freshly inserted module starts as identity plus CAM.
    for (double& v : p.bn2.gamma.mutable_data())
        v = 0.0;
    const ConvSpec spec = p.conv_spec();
    const std::size_t fan_in = (channels / spec.groups) * 9;
    p.dconv1_w = fan_in_uniform(spec.weight_shape(), fan_in, rng);
    p.dconv2_w = fan_in_uniform(spec.weight_shape(), fan_in, rng);
    p.prelu_slopes = Tensor::full({channels}, 0.25, true);
    return p;
}

ConvSpec DrmParams::conv_spec() const
{
    if (conv_kind == ConvKind::depthwise)
        return ConvSpec::depthwise(channels, 3, 1, 1);
    return ConvSpec{channels, channels, 3, 1, 1, 1, false};
}

std::vector<NamedTensor> DrmParams::parameters() const
{
    return {{"bn1.gamma", bn1.gamma},  {"bn1.beta", bn1.beta},           {"conv1.weight", dconv1_w},
            {"prelu.slope", prelu_slopes}, {"conv2.weight", dconv2_w}, {"bn2.gamma", bn2.gamma},
            {"bn2.beta", bn2.beta}};
}

void DrmParams::set_mode(Mode mode)
{
    bn1.mode = mode;
    bn2.mode = mode;
}

Tensor drm_residual(const Tensor& x, DrmParams& p)
{
    if (x.rank() != 4 || x.dim(1) != p.channels)
        throw ShapeError("drm: input " + to_string(x.shape()) + " does not have " + std::to_string(p.channels) +
                         " channels");
    const ConvSpec spec = p.conv_spec();
    Tensor t = batch_norm(x, p.bn1);
    t = conv2d(t, p.dconv1_w, std::nullopt, spec);
    t = prelu(t, p.prelu_slopes);
    t = conv2d(t, p.dconv2_w, std::nullopt, spec);
    return batch_norm(t, p.bn2);
}

Tensor drm_forward(const Tensor& x, DrmParams& p, std::span<const double> gate)
{
    check_gate(gate, x, "drm_forward");
    return add(x, scale_per_sample(drm_residual(x, p), gate));
}

// ---------------------------------------------------------------- CAM

CamParams CamParams::make(std::size_t channels, CamVariant variant, bool identity_mapping, std::size_t reduction,
                          Rng& rng)
{
    if (reduction == 0 || channels == 0 || channels % reduction != 0)
        throw std::invalid_argument("CAM: reduction " + std::to_string(reduction) + " does not divide " +
                                    std::to_string(channels) + " channels");
    CamParams p;
    p.channels = channels;
    p.variant = variant;
    p.identity_mapping = identity_mapping;
    p.reduction = reduction;
    const std::size_t hidden = channels / reduction;
    p.mlp_w1 = fan_in_uniform({hidden, channels}, channels, rng);
    p.mlp_w2 = fan_in_uniform({channels, hidden}, hidden, rng);
    return p;
}

std::vector<NamedTensor> CamParams::parameters() const
{
    return {{"mlp.fc1.weight", mlp_w1}, {"mlp.fc2.weight", mlp_w2}};
}

Tensor cam_attention(const Tensor& x, const CamParams& p)
{
    if (x.rank() != 4 || x.dim(1) != p.channels)
        throw ShapeError("cam: input " + to_string(x.shape()) + " does not have " + std::to_string(p.channels) +
                         " channels");
    auto mlp = [&](const Tensor& pooled) {
        return affine(relu(affine(pooled, p.mlp_w1, std::nullopt)), p.mlp_w2, std::nullopt);
    };
    Tensor logits = mlp(global_pool(x, PoolKind::avg));
    if (p.variant == CamVariant::cbam)
        logits = add(logits, mlp(global_pool(x, PoolKind::max)));
    return sigmoid(logits);
}

Tensor cam_forward(const Tensor& x, const CamParams& p)
{
    Tensor weighted = mul_channels(x, cam_attention(x, p));
    return p.identity_mapping ? add(x, weighted) : weighted;
}

// ---------------------------------------------------------------- PAM

PamParams PamParams::make(std::size_t channels, const PamOptions& options, Rng& rng)
{
    PamParams p;
    p.channels = channels;
    p.options = options;
    if (options.use_drm)
        p.drm = DrmParams::make(channels, options.conv_kind, rng);
    if (options.use_cam)
        p.cam = CamParams::make(channels, options.cam_variant, options.cam_identity_mapping, options.reduction, rng);
    return p;
}

std::vector<NamedTensor> PamParams::parameters() const
{
    std::vector<NamedTensor> out;
    if (drm)
        append(out, "drm.", drm->parameters());
    if (cam)
        append(out, "cam.", cam->parameters());
    return out;
}

void PamParams::set_mode(Mode mode)
{
    if (drm)
        drm->set_mode(mode);
}

Tensor pam_forward(const Tensor& x, DrmParams& drm, const CamParams& cam, std::span<const double> gate)
{
    return cam_forward(drm_forward(x, drm, gate), cam);
}

Tensor pam_forward(const Tensor& x, PamParams& p, std::span<const double> gate)
{
    check_gate(gate, x, "pam_forward");
    Tensor t = x;
    if (p.drm)
        t = drm_forward(t, *p.drm, gate);
    if (p.cam)
        t = cam_forward(t, *p.cam);
    return t;
}

// ---------------------------------------------------------------- DREAM

DreamParams DreamParams::make(std::size_t dim, Rng& rng)
{
    if (dim == 0)
        throw std::invalid_argument("DREAM needs a positive embedding dimension");
    DreamParams p;
    p.dim = dim;
    p.fc1_w = fan_in_uniform({dim, dim}, dim, rng);
    p.fc1_b = fan_in_uniform({dim}, dim, rng);
    p.fc2_w = fan_in_uniform({dim, dim}, dim, rng);
    p.fc2_b = fan_in_uniform({dim}, dim, rng);
    return p;
}

std::vector<NamedTensor> DreamParams::parameters() const
{
    return {{"fc1.weight", fc1_w}, {"fc1.bias", fc1_b}, {"fc2.weight", fc2_w}, {"fc2.bias", fc2_b}};
}

Tensor dream_forward(const Tensor& e, const DreamParams& p, std::span<const double> gate)
{
    if (e.rank() != 2 || e.dim(1) != p.dim)
        throw ShapeError("dream: embedding " + to_string(e.shape()) + " does not have dimension " +
                         std::to_string(p.dim));
    check_gate(gate, e, "dream_forward");
    Tensor r = affine(relu(affine(e, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
    return add(e, scale_per_sample(r, gate));
}

// ---------------------------------------------------------------- closed forms

std::size_t drm_param_formula(std::size_t c, ConvKind kind)
{
    // Two BN affine pairs and the PReLU slopes, plus two 3x3 kernels.
    const std::size_t kernels = kind == ConvKind::depthwise ? 2 * 9 * c : 2 * 9 * c * c;
    return 4 * c + c + kernels;
}

std::size_t cam_param_formula(std::size_t c, std::size_t reduction)
{
    return 2 * c * (c / reduction);
}

std::size_t pam_param_formula(std::size_t c, const PamOptions& options)
{
    return (options.use_drm ? drm_param_formula(c, options.conv_kind) : 0) +
           (options.use_cam ? cam_param_formula(c, options.reduction) : 0);
}

std::size_t dream_param_formula(std::size_t d)
{
    return 2 * (d * d + d);
}

} // namespace pam
