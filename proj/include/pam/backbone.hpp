#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pam/blocks.hpp"

namespace pam {

struct BackboneConfig {
    std::array<std::size_t, 4> stage_channels{8, 16, 32, 64};
    std::array<std::size_t, 4> blocks_per_stage{1, 1, 1, 1};
    std::size_t input_size = 32;
    std::size_t input_channels = 1;
    std::size_t embedding_dim = 64;

    /// 112x112 RGB input, {64,128,256,512} channels, {3,4,14,3} units, 512-d embedding.
    static BackboneConfig reference();
    /// 32x32 single-channel input, {8,16,32,64} channels, one unit per stage.
    static BackboneConfig toy();

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    /// Spatial extent at the end of stage s (1-based).
    std::size_t stage_extent(std::size_t stage) const;
    bool operator==(const BackboneConfig&) const = default;
};

/// Set of backbone stages (1..4) that end with a PAM.
class PlacementPlan {
public:
    PlacementPlan() = default;
    explicit PlacementPlan(std::array<bool, 4> stages) : stages_(stages) {}

    bool contains(std::size_t stage) const { return stage >= 1 && stage <= 4 && stages_[stage - 1]; }
    bool empty() const;
    std::vector<std::size_t> stages() const;
    bool operator==(const PlacementPlan&) const = default;

private:
    std::array<bool, 4> stages_{};
};

/// Accepts "baseline" or "PAM" followed by distinct ascending digits 1-4.
PlacementPlan parse_placement(std::string_view text);
std::string render_placement(const PlacementPlan& plan);

enum class GateMode { soft, fixed_one };
const char* to_string(GateMode mode);

struct ModelOptions {
    PamOptions pam;
    GateMode gate_mode = GateMode::soft;
    GateConfig gate;
    /// Appends a gated embedding-space residual (the DREAM baseline).
    bool dream_head = false;
};

/// Non-trainable state saved alongside the parameters.
struct NamedBuffer {
    std::string name;
    std::vector<double>* values;
};

class Model {
public:
    static Model build(const BackboneConfig& cfg, const PlacementPlan& plan, const ModelOptions& options,
                       std::uint64_t seed);

    /// Embeddings (batch, embedding_dim). Each selected stage end applies
    /// PAM with the per-sample gate derived from `yaw_deg`.
    Tensor forward_extract(const Tensor& images, std::span<const double> yaw_deg, Mode mode);
    /// Same network with explicit gate values instead of yaw.
    Tensor forward_with_gates(const Tensor& images, std::span<const double> gates, Mode mode);
    std::vector<double> gates_for(std::span<const double> yaw_deg) const;

    /// Trainable arrays in a fixed order with hierarchical names.
    std::vector<NamedTensor> parameters() const;
    std::vector<NamedBuffer> buffers();
    std::size_t trainable_count() const { return count_trainable(parameters()); }
    /// Trainable scalars owned by the PAM blocks alone.
    std::size_t pam_trainable_count() const;

    const BackboneConfig& config() const { return cfg_; }
    const PlacementPlan& plan() const { return plan_; }
    const ModelOptions& options() const { return options_; }
    const std::vector<std::optional<PamParams>>& pams() const { return pams_; }

private:
    struct Unit {
        std::size_t in_channels, out_channels, stride;
        BatchNormState bn1, bn2, bn3;
        Tensor conv1_w, conv2_w, prelu_slopes;
        // Projection shortcut when channels change; strided subsampling otherwise.
        std::optional<Tensor> short_conv_w;
        std::optional<BatchNormState> short_bn;
        Tensor subsample_w;
    };

    Tensor unit_forward(Unit& unit, const Tensor& x);
    std::vector<BatchNormState*> batch_norms();
    void set_mode(Mode mode);

    BackboneConfig cfg_;
    PlacementPlan plan_;
    ModelOptions options_;
    Tensor stem_w_, stem_prelu_;
    BatchNormState stem_bn_;
    std::array<std::vector<Unit>, 4> stages_;
    std::vector<std::optional<PamParams>> pams_;
    BatchNormState head_bn_;
    Tensor fc_w_, fc_b_;
    BatchNormState embed_bn_;
    std::optional<DreamParams> dream_;
};

} // namespace pam
