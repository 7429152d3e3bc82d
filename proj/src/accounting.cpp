#include "pam/accounting.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pam {

namespace {

std::string fmt_g(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string signed_int(std::int64_t v)
{
    return (v > 0 ? "+" : "") + std::to_string(v);
}

} // namespace

std::uint64_t CostReport::total_params() const
{
    return std::accumulate(per_block.begin(), per_block.end(), std::uint64_t{0},
                           [](std::uint64_t a, const CostEntry& e) { return a + e.params; });
}

std::uint64_t CostReport::total_macs() const
{
    return std::accumulate(per_block.begin(), per_block.end(), std::uint64_t{0},
                           [](std::uint64_t a, const CostEntry& e) { return a + e.macs; });
}

std::uint64_t count_params(const std::vector<NamedTensor>& params)
{
    std::uint64_t n = 0;
    for (const auto& p : params)
        if (p.tensor.requires_grad())
            n += p.tensor.numel();
    return n;
}

std::uint64_t count_params(const Model& model)
{
    return count_params(model.parameters());
}

std::uint64_t count_macs(const ConvSpec& spec, std::size_t height, std::size_t width)
{
    spec.validate();
    const std::uint64_t ho = spec.output_extent(height);
    const std::uint64_t wo = spec.output_extent(width);
    const std::uint64_t k2 = std::uint64_t{spec.kernel_size} * spec.kernel_size;
    return ho * wo * spec.out_channels * (spec.in_channels / spec.groups) * k2;
}

std::uint64_t drm_macs(std::size_t channels, ConvKind kind, std::size_t extent)
{
    DrmParams shape_only;
    shape_only.channels = channels;
    shape_only.conv_kind = kind;
    return 2 * count_macs(shape_only.conv_spec(), extent, extent);
}

std::uint64_t cam_macs(std::size_t channels, std::size_t reduction, CamVariant variant)
{
    const std::uint64_t per_branch = 2 * std::uint64_t{channels} * (channels / reduction);
    return variant == CamVariant::cbam ? 2 * per_branch : per_branch;
}

std::uint64_t dream_macs(std::size_t dim)
{
    return 2 * std::uint64_t{dim} * dim;
}

Variant parse_variant(std::string_view text)
{
    Variant v;
    v.label = std::string(text);
    if (text == "DREAM") {
        v.dream = true;
        return v;
    }
    std::string_view plan = text;
    if (text.size() > 2 && text[text.size() - 2] == '-') {
        const char suffix = text.back();
        if (suffix == 'C')
            v.pam.conv_kind = ConvKind::dense;
        else if (suffix != 'D')
            throw std::invalid_argument("unknown variant suffix in '" + std::string(text) + "'");
        plan = text.substr(0, text.size() - 2);
        if (plan == "baseline")
            throw std::invalid_argument("variant '" + std::string(text) + "': suffix needs a PAM placement");
    }
    v.plan = parse_placement(plan);
    return v;
}

CostReport variant_report(const BackboneConfig& cfg, const Variant& variant)
{
    cfg.validate();
    CostReport r;
    r.label = variant.label;
    Rng rng(0);
    for (std::size_t s : variant.plan.stages()) {
        const std::size_t c = cfg.stage_channels[s - 1];
        if (variant.pam.use_cam && c % variant.pam.reduction != 0)
            throw std::invalid_argument("reduction " + std::to_string(variant.pam.reduction) +
                                        " does not divide stage " + std::to_string(s) + " channels " +
                                        std::to_string(c));
        const PamParams p = PamParams::make(c, variant.pam, rng);
        std::uint64_t macs = 0;
        if (p.drm)
            macs += drm_macs(c, p.drm->conv_kind, cfg.stage_extent(s));
        if (p.cam)
            macs += cam_macs(c, p.cam->reduction, p.cam->variant);
        r.per_block.push_back({"stage" + std::to_string(s) + ".pam", count_params(p.parameters()), macs});
    }
    if (variant.dream) {
        const DreamParams d = DreamParams::make(cfg.embedding_dim, rng);
        r.per_block.push_back({"head.dream", count_params(d.parameters()), dream_macs(cfg.embedding_dim)});
    }
    return r;
}

CostReport trunk_report(const BackboneConfig& cfg)
{
    cfg.validate();
    CostReport r;
    r.label = "trunk";
    auto conv = [](std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
        return ConvSpec{in, out, k, stride, k / 2, 1, false};
    };
    std::size_t extent = cfg.input_size;
    const std::size_t c0 = cfg.stage_channels[0];
    r.per_block.push_back({"stem", 9 * cfg.input_channels * c0 + 2 * c0 + c0,
                           count_macs(conv(cfg.input_channels, c0, 3, 1), extent, extent)});
    std::size_t in = c0;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t out = cfg.stage_channels[s];
        for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const std::size_t stride = b == 0 ? 2 : 1;
            CostEntry e{"stage" + std::to_string(s + 1) + ".unit" + std::to_string(b + 1), 0, 0};
            e.params = 2 * in + 9 * in * out + 2 * out + out + 9 * out * out + 2 * out;
            e.macs = count_macs(conv(in, out, 3, 1), extent, extent);
            e.macs += count_macs(conv(out, out, 3, stride), extent, extent);
            if (in != out) {
                e.params += in * out + 2 * out;
                e.macs += count_macs(conv(in, out, 1, stride), extent, extent);
            }
            r.per_block.push_back(std::move(e));
            extent = conv(out, out, 3, stride).output_extent(extent);
            in = out;
        }
    }
    const std::size_t flat = in * extent * extent;
    const std::size_t d = cfg.embedding_dim;
    r.per_block.push_back({"head", 2 * in + flat * d + d + 2 * d, std::uint64_t{flat} * d});
    return r;
}

const ComparisonRow& Comparison::row(std::string_view label) const
{
    for (const auto& r : rows)
        if (r.label == label)
            return r;
    throw std::invalid_argument("comparison has no row '" + std::string(label) + "'");
}

Comparison compare(const std::vector<CostReport>& reports, std::string_view baseline,
                   std::optional<std::string> ratio_reference)
{
    auto find = [&](std::string_view label) {
        return std::find_if(reports.begin(), reports.end(), [&](const CostReport& r) { return r.label == label; });
    };
    const auto base = find(baseline);
    if (base == reports.end())
        throw std::invalid_argument("baseline '" + std::string(baseline) + "' is not among the reports");
    if (!ratio_reference) {
        for (const auto& r : reports)
            if (r.label != baseline) {
                ratio_reference = r.label;
                break;
            }
    } else if (find(*ratio_reference) == reports.end()) {
        throw std::invalid_argument("ratio reference '" + *ratio_reference + "' is not among the reports");
    }

    Comparison cmp;
    cmp.baseline = std::string(baseline);
    cmp.ratio_reference = ratio_reference.value_or("");
    const auto base_params = static_cast<std::int64_t>(base->total_params());
    const auto base_macs = static_cast<std::int64_t>(base->total_macs());
    for (const auto& r : reports) {
        ComparisonRow row;
        row.label = r.label;
        row.params = r.total_params();
        row.macs = r.total_macs();
        row.delta_params = static_cast<std::int64_t>(row.params) - base_params;
        row.delta_macs = static_cast<std::int64_t>(row.macs) - base_macs;
        cmp.rows.push_back(std::move(row));
    }
    if (ratio_reference) {
        const std::int64_t ref = cmp.row(*ratio_reference).delta_params;
        if (ref != 0)
            for (auto& row : cmp.rows)
                row.ratio = static_cast<double>(row.delta_params) / static_cast<double>(ref);
    }
    return cmp;
}

const std::vector<PaperValue>& paper_deltas()
{
    static const std::vector<PaperValue> values{
        {"PAM12", 6976},      {"PAM34", 58624},     {"PAM1234", 65600}, {"PAM123", 21056},
        {"PAM124", 51520},    {"PAM12-C", 372160},  {"PAM12-D", 6976},  {"DREAM", 525312},
    };
    return values;
}

std::vector<PaperCheck> check_paper_deltas()
{
    const auto cfg = BackboneConfig::reference();
    const std::vector<CostReport> reports{variant_report(cfg, parse_variant("baseline"))};
    std::vector<PaperCheck> out;
    for (const auto& pv : paper_deltas()) {
        const CostReport r = variant_report(cfg, parse_variant(pv.variant));
        out.push_back({pv, r.total_params() - reports.front().total_params()});
    }
    return out;
}

std::string render_table(const Comparison& cmp)
{
    std::vector<std::vector<std::string>> cells{{"variant", "params", "delta", "macs", "delta_macs", "ratio"}};
    for (const auto& r : cmp.rows)
        cells.push_back({r.label, std::to_string(r.params), signed_int(r.delta_params), std::to_string(r.macs),
                         signed_int(r.delta_macs), r.ratio ? fmt_g(*r.ratio) : "-"});
    std::vector<std::size_t> width(cells.front().size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i)
            width[i] = std::max(width[i], line[i].size());
    std::ostringstream os;
    os << "baseline: " << cmp.baseline;
    if (!cmp.ratio_reference.empty())
        os << "  ratio reference: " << cmp.ratio_reference;
    os << '\n';
    for (const auto& line : cells) {
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (i == 0)
                os << line[i] << std::string(width[i] - line[i].size(), ' ');
            else
                os << "  " << std::string(width[i] - line[i].size(), ' ') << line[i];
        }
        os << '\n';
    }
    return os.str();
}

std::string render_records(const CostReport& report)
{
    std::ostringstream os;
    for (const auto& e : report.per_block)
        os << "report=" << report.label << " block=" << e.name << " params=" << e.params << " macs=" << e.macs
           << '\n';
    os << "report=" << report.label << " block=total params=" << report.total_params()
       << " macs=" << report.total_macs() << '\n';
    return os.str();
}

std::string render_records(const Comparison& cmp)
{
    std::ostringstream os;
    for (const auto& r : cmp.rows) {
        os << "variant=" << r.label << " params=" << r.params << " macs=" << r.macs
           << " delta_params=" << r.delta_params << " delta_macs=" << r.delta_macs;
        if (r.ratio)
            os << " ratio=" << fmt_g(*r.ratio);
        os << '\n';
    }
    return os.str();
}

} // namespace pam
