#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pam/backbone.hpp"

namespace pam {

/// MACs are multiplications of convolution and fully-connected layers per
/// sample; normalization, activation and elementwise products are not counted.
struct CostEntry {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct CostReport {
    std::string label;
    std::vector<CostEntry> per_block;

    std::uint64_t total_params() const;
    std::uint64_t total_macs() const;
};

/// Trainable scalars; BN running statistics are buffers and never counted.
std::uint64_t count_params(const std::vector<NamedTensor>& params);
std::uint64_t count_params(const Model& model);

/// H_out * W_out * C_j * (C_i / groups) * k^2.
std::uint64_t count_macs(const ConvSpec& spec, std::size_t height, std::size_t width);

std::uint64_t drm_macs(std::size_t channels, ConvKind kind, std::size_t extent);
std::uint64_t cam_macs(std::size_t channels, std::size_t reduction, CamVariant variant);
std::uint64_t dream_macs(std::size_t dim);

/// A named model variant: "baseline", "PAM<digits>", "PAM<digits>-C" (dense
/// DRM convolutions), "PAM<digits>-D" (depthwise, same as the plain form) or
/// "DREAM" (embedding-space residual head, no PAM).
struct Variant {
    std::string label;
    PlacementPlan plan;
    PamOptions pam;
    bool dream = false;
};

Variant parse_variant(std::string_view text);

/// Per-block costs of the blocks a variant adds. Parameter counts come from
/// arrays constructed by the block factories, not from closed forms.
CostReport variant_report(const BackboneConfig& cfg, const Variant& variant);

/// Layer-by-layer listing of the plain backbone (stem, units, head); agrees
/// with Model::build without allocating the reference-size weights.
CostReport trunk_report(const BackboneConfig& cfg);

struct ComparisonRow {
    std::string label;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    std::int64_t delta_params = 0;
    std::int64_t delta_macs = 0;
    /// delta_params divided by the delta of the ratio reference row.
    std::optional<double> ratio;
};

struct Comparison {
    std::string baseline;
    std::string ratio_reference;
    std::vector<ComparisonRow> rows;

    const ComparisonRow& row(std::string_view label) const;
};

/// Throws std::invalid_argument when the baseline (or the ratio reference,
/// if given) is not among the reports. Without an explicit reference the
/// first non-baseline report is used.
Comparison compare(const std::vector<CostReport>& reports, std::string_view baseline,
                   std::optional<std::string> ratio_reference = std::nullopt);

struct PaperValue {
    std::string variant;
    std::uint64_t delta;
};

/// The eight published parameter deltas for the reference profile.
const std::vector<PaperValue>& paper_deltas();

struct PaperCheck {
    PaperValue expected;
    std::uint64_t counted = 0;
    bool ok() const { return counted == expected.delta; }
};

std::vector<PaperCheck> check_paper_deltas();

std::string render_table(const Comparison& cmp);
/// One record per line: `report=<label> block=<name> params=<n> macs=<n>`.
std::string render_records(const CostReport& report);
/// One record per line: `variant=<label> params=... macs=... delta_params=... delta_macs=... ratio=...`.
std::string render_records(const Comparison& cmp);

} // namespace pam
