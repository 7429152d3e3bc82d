#include "pam/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace pam {

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(numel(shape));
    for (double& x : v)
        x = uniform(rng, -bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

ConvSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride)
{
    return ConvSpec{in, out, 3, stride, 1, 1, false};
}

// PAM blocks draw from their own stream so that the trunk initialization
// does not depend on the placement.
Rng pam_stream(std::uint64_t seed, std::size_t stage)
{
    return Rng(seed * 0x9E3779B97F4A7C15ULL + 0x5AB0 + stage);
}

void append_bn(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNormState& bn)
{
    out.push_back({prefix + ".gamma", bn.gamma});
    out.push_back({prefix + ".beta", bn.beta});
}

void append_bn_buffers(std::vector<NamedBuffer>& out, const std::string& prefix, BatchNormState& bn)
{
    out.push_back({prefix + ".running_mean", &bn.running_mean});
    out.push_back({prefix + ".running_var", &bn.running_var});
}

std::string stage_prefix(std::size_t s)
{
    return "stage" + std::to_string(s + 1);
}

} // namespace

BackboneConfig BackboneConfig::reference()
{
    BackboneConfig c;
    c.stage_channels = {64, 128, 256, 512};
    c.blocks_per_stage = {3, 4, 14, 3};
    c.input_size = 112;
    c.input_channels = 3;
    c.embedding_dim = 512;
    return c;
}

BackboneConfig BackboneConfig::toy()
{
    return BackboneConfig{};
}

void BackboneConfig::validate() const
{
    for (std::size_t s = 0; s < 4; ++s) {
        if (stage_channels[s] == 0)
            throw std::invalid_argument("stage_channels must be positive");
        if (s > 0 && stage_channels[s] < stage_channels[s - 1])
            throw std::invalid_argument("stage_channels must be nondecreasing");
        if (blocks_per_stage[s] == 0)
            throw std::invalid_argument("blocks_per_stage must be positive");
    }
    if (input_channels == 0 || embedding_dim == 0)
        throw std::invalid_argument("input_channels and embedding_dim must be positive");
    if (input_size < 16)
        throw std::invalid_argument("input_size must be at least 16 (four stride-2 stages)");
}

std::size_t BackboneConfig::stage_extent(std::size_t stage) const
{
    std::size_t e = input_size;
    for (std::size_t s = 0; s < stage; ++s)
        e = (e + 2 - 3) / 2 + 1;
    return e;
}

bool PlacementPlan::empty() const
{
    return !(stages_[0] || stages_[1] || stages_[2] || stages_[3]);
}

std::vector<std::size_t> PlacementPlan::stages() const
{
    std::vector<std::size_t> out;
    for (std::size_t s = 1; s <= 4; ++s)
        if (contains(s))
            out.push_back(s);
    return out;
}

PlacementPlan parse_placement(std::string_view text)
{
    if (text == "baseline")
        return PlacementPlan{};
    const auto fail = [&](const std::string& why) {
        return std::invalid_argument("invalid placement '" + std::string(text) + "': " + why);
    };
    if (text.size() < 4 || text.substr(0, 3) != "PAM")
        throw fail("expected 'baseline' or 'PAM' followed by stage digits");
    std::array<bool, 4> stages{};
    char previous = '0';
    for (char ch : text.substr(3)) {
        if (ch < '1' || ch > '4')
            throw fail(std::string("stage digit '") + ch + "' is not in 1-4");
        if (ch <= previous)
            throw fail("stage digits must be distinct and ascending");
        stages[static_cast<std::size_t>(ch - '1')] = true;
        previous = ch;
    }
    return PlacementPlan(stages);
}

std::string render_placement(const PlacementPlan& plan)
{
    if (plan.empty())
        return "baseline";
    std::string out = "PAM";
    for (std::size_t s : plan.stages())
        out += static_cast<char>('0' + s);
    return out;
}

const char* to_string(GateMode mode)
{
    return mode == GateMode::soft ? "soft" : "fixed-one";
}

Model Model::build(const BackboneConfig& cfg, const PlacementPlan& plan, const ModelOptions& options,
                   std::uint64_t seed)
{
    cfg.validate();
    for (std::size_t s : plan.stages())
        if (options.pam.use_cam && cfg.stage_channels[s - 1] % options.pam.reduction != 0)
            throw std::invalid_argument("reduction " + std::to_string(options.pam.reduction) +
                                        " does not divide stage " + std::to_string(s) + " channels " +
                                        std::to_string(cfg.stage_channels[s - 1]));
    Model m;
    m.cfg_ = cfg;
    m.plan_ = plan;
    m.options_ = options;
    Rng rng(seed);

    const std::size_t c0 = cfg.stage_channels[0];
    m.stem_w_ = kaiming_uniform(conv3x3(cfg.input_channels, c0, 1).weight_shape(), cfg.input_channels * 9, rng);
    m.stem_bn_ = BatchNormState::make(c0);
    m.stem_prelu_ = Tensor::full({c0}, 0.25, true);

    std::size_t in = c0;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t out = cfg.stage_channels[s];
        for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            Unit u;
            u.in_channels = in;
            u.out_channels = out;
            u.stride = b == 0 ? 2 : 1;
            u.bn1 = BatchNormState::make(in);
            u.conv1_w = kaiming_uniform(conv3x3(in, out, 1).weight_shape(), in * 9, rng);
            u.bn2 = BatchNormState::make(out);
            u.prelu_slopes = Tensor::full({out}, 0.25, true);
            u.conv2_w = kaiming_uniform(conv3x3(out, out, u.stride).weight_shape(), out * 9, rng);
            u.bn3 = BatchNormState::make(out);
            if (in != out) {
                u.short_conv_w = kaiming_uniform({out, in, 1, 1}, in, rng);
                u.short_bn = BatchNormState::make(out);
            } else {
                u.subsample_w = Tensor::full({in, 1, 1, 1}, 1.0, false);
            }
            m.stages_[s].push_back(std::move(u));
            in = out;
        }
    }

    m.pams_.resize(4);
    for (std::size_t s : plan.stages()) {
        Rng pr = pam_stream(seed, s);
        m.pams_[s - 1] = PamParams::make(cfg.stage_channels[s - 1], options.pam, pr);
    }

    const std::size_t c4 = cfg.stage_channels[3];
    const std::size_t extent = cfg.stage_extent(4);
    const std::size_t flat = c4 * extent * extent;
    m.head_bn_ = BatchNormState::make(c4);
    m.fc_w_ = kaiming_uniform({cfg.embedding_dim, flat}, flat, rng);
    m.fc_b_ = Tensor::zeros({cfg.embedding_dim}, true);
    m.embed_bn_ = BatchNormState::make(cfg.embedding_dim);
    if (options.dream_head) {
        Rng dr = pam_stream(seed, 99);
        m.dream_ = DreamParams::make(cfg.embedding_dim, dr);
    }
    return m;
}

Tensor Model::unit_forward(Unit& u, const Tensor& x)
{
    Tensor r = batch_norm(x, u.bn1);
    r = conv2d(r, u.conv1_w, std::nullopt, conv3x3(u.in_channels, u.out_channels, 1));
    r = batch_norm(r, u.bn2);
    r = prelu(r, u.prelu_slopes);
    r = conv2d(r, u.conv2_w, std::nullopt, conv3x3(u.out_channels, u.out_channels, u.stride));
    r = batch_norm(r, u.bn3);

    Tensor shortcut = x;
    if (u.short_conv_w) {
        const ConvSpec spec{u.in_channels, u.out_channels, 1, u.stride, 0, 1, false};
        shortcut = batch_norm(conv2d(x, *u.short_conv_w, std::nullopt, spec), *u.short_bn);
    } else if (u.stride != 1) {
        shortcut = conv2d(x, u.subsample_w, std::nullopt, ConvSpec::depthwise(u.in_channels, 1, u.stride, 0));
    }
    return add(r, shortcut);
}

std::vector<double> Model::gates_for(std::span<const double> yaw_deg) const
{
    std::vector<double> gates = soft_gates(yaw_deg, options_.gate);
    if (options_.gate_mode == GateMode::fixed_one)
        std::fill(gates.begin(), gates.end(), 1.0);
    return gates;
}

Tensor Model::forward_extract(const Tensor& images, std::span<const double> yaw_deg, Mode mode)
{
    return forward_with_gates(images, gates_for(yaw_deg), mode);
}

Tensor Model::forward_with_gates(const Tensor& images, std::span<const double> gates, Mode mode)
{
    const Shape expected{images.rank() == 4 ? images.dim(0) : 0, cfg_.input_channels, cfg_.input_size,
                         cfg_.input_size};
    if (images.shape() != expected)
        throw ShapeError("model expects images shaped (batch, " + std::to_string(cfg_.input_channels) + ", " +
                         std::to_string(cfg_.input_size) + ", " + std::to_string(cfg_.input_size) + "), got " +
                         to_string(images.shape()));
    if (gates.size() != images.dim(0))
        throw ShapeError("model: " + std::to_string(gates.size()) + " gate values for batch " +
                         std::to_string(images.dim(0)));
    set_mode(mode);

    Tensor t = conv2d(images, stem_w_, std::nullopt, conv3x3(cfg_.input_channels, cfg_.stage_channels[0], 1));
    t = prelu(batch_norm(t, stem_bn_), stem_prelu_);
    for (std::size_t s = 0; s < 4; ++s) {
        for (Unit& u : stages_[s])
            t = unit_forward(u, t);
        if (pams_[s])
            t = pam_forward(t, *pams_[s], gates);
    }
    t = flatten(batch_norm(t, head_bn_));
    t = batch_norm(affine(t, fc_w_, fc_b_), embed_bn_);
    if (dream_)
        t = dream_forward(t, *dream_, gates);
    return t;
}

std::vector<NamedTensor> Model::parameters() const
{
    std::vector<NamedTensor> out;
    out.push_back({"stem.conv.weight", stem_w_});
    append_bn(out, "stem.bn", stem_bn_);
    out.push_back({"stem.prelu.slope", stem_prelu_});
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            const Unit& u = stages_[s][b];
            const std::string p = stage_prefix(s) + ".unit" + std::to_string(b + 1);
            append_bn(out, p + ".bn1", u.bn1);
            out.push_back({p + ".conv1.weight", u.conv1_w});
            append_bn(out, p + ".bn2", u.bn2);
            out.push_back({p + ".prelu.slope", u.prelu_slopes});
            out.push_back({p + ".conv2.weight", u.conv2_w});
            append_bn(out, p + ".bn3", u.bn3);
            if (u.short_conv_w) {
                out.push_back({p + ".shortcut.conv.weight", *u.short_conv_w});
                append_bn(out, p + ".shortcut.bn", *u.short_bn);
            }
        }
        if (pams_[s])
            for (const auto& np : pams_[s]->parameters())
                out.push_back({stage_prefix(s) + ".pam." + np.name, np.tensor});
    }
    append_bn(out, "head.bn", head_bn_);
    out.push_back({"head.fc.weight", fc_w_});
    out.push_back({"head.fc.bias", fc_b_});
    append_bn(out, "head.embed_bn", embed_bn_);
    if (dream_)
        for (const auto& np : dream_->parameters())
            out.push_back({"dream." + np.name, np.tensor});
    return out;
}

std::vector<NamedBuffer> Model::buffers()
{
    std::vector<NamedBuffer> out;
    append_bn_buffers(out, "stem.bn", stem_bn_);
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            Unit& u = stages_[s][b];
            const std::string p = stage_prefix(s) + ".unit" + std::to_string(b + 1);
            append_bn_buffers(out, p + ".bn1", u.bn1);
            append_bn_buffers(out, p + ".bn2", u.bn2);
            append_bn_buffers(out, p + ".bn3", u.bn3);
            if (u.short_bn)
                append_bn_buffers(out, p + ".shortcut.bn", *u.short_bn);
        }
        if (pams_[s] && pams_[s]->drm) {
            const std::string p = stage_prefix(s) + ".pam.drm";
            append_bn_buffers(out, p + ".bn1", pams_[s]->drm->bn1);
            append_bn_buffers(out, p + ".bn2", pams_[s]->drm->bn2);
        }
    }
    append_bn_buffers(out, "head.bn", head_bn_);
    append_bn_buffers(out, "head.embed_bn", embed_bn_);
    return out;
}

std::size_t Model::pam_trainable_count() const
{
    std::size_t n = 0;
    for (const auto& p : pams_)
        if (p)
            n += count_trainable(p->parameters());
    return n;
}

std::vector<BatchNormState*> Model::batch_norms()
{
    std::vector<BatchNormState*> out{&stem_bn_, &head_bn_, &embed_bn_};
    for (auto& stage : stages_)
        for (Unit& u : stage) {
            out.push_back(&u.bn1);
            out.push_back(&u.bn2);
            out.push_back(&u.bn3);
            if (u.short_bn)
                out.push_back(&*u.short_bn);
        }
    for (auto& p : pams_)
        if (p && p->drm) {
            out.push_back(&p->drm->bn1);
            out.push_back(&p->drm->bn2);
        }
    return out;
}

void Model::set_mode(Mode mode)
{
    for (BatchNormState* bn : batch_norms())
        bn->mode = mode;
}

} // namespace pam
