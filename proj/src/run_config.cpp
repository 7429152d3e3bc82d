#include "pam/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pam {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string render_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::uint64_t parse_uint(const std::string& v)
{
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || v.empty())
        throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v)
{
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || v.empty())
        throw std::invalid_argument("expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v)
{
    if (v == "true")
        return true;
    if (v == "false")
        return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& v)
{
    std::vector<std::size_t> out;
    if (trim(v).empty())
        return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_uint(trim(item)));
    return out;
}

std::array<std::size_t, 4> parse_four(const std::string& v)
{
    const auto list = parse_list(v);
    if (list.size() != 4)
        throw std::invalid_argument("expected four comma-separated integers, got '" + v + "'");
    return {list[0], list[1], list[2], list[3]};
}

template <typename Range>
std::string render_list(const Range& r)
{
    std::string out;
    for (auto v : r)
        out += (out.empty() ? "" : ",") + std::to_string(v);
    return out;
}

struct Field {
    const char* section;
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields()
{
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    static const std::vector<Field> table{
        {"dataset", "seed", [](RunConfig& c, const std::string& v) { c.dataset.seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.dataset.seed); }},
        {"dataset", "identities", [](RunConfig& c, const std::string& v) { c.dataset.identities = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.dataset.identities); }},
        {"dataset", "per_identity", [](RunConfig& c, const std::string& v) { c.dataset.per_identity = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.dataset.per_identity); }},
        {"dataset", "image_size", [](RunConfig& c, const std::string& v) { c.dataset.image_size = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.dataset.image_size); }},
        {"dataset", "yaw_law", [](RunConfig& c, const std::string& v) { c.dataset.yaw_law = parse_yaw_law(v); },
         [](const RunConfig& c) { return std::string(to_string(c.dataset.yaw_law)); }},
        {"dataset", "noise", [](RunConfig& c, const std::string& v) { c.dataset.noise = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.dataset.noise); }},

        {"eval", "gallery_per_identity",
         [](RunConfig& c, const std::string& v) { c.pairs.gallery_per_identity = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.pairs.gallery_per_identity); }},
        {"eval", "probes_per_identity",
         [](RunConfig& c, const std::string& v) { c.pairs.probes_per_identity = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.pairs.probes_per_identity); }},
        {"eval", "gallery_max_yaw", [](RunConfig& c, const std::string& v) { c.pairs.gallery_max_yaw = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.pairs.gallery_max_yaw); }},
        {"eval", "stream", [](RunConfig& c, const std::string& v) { c.pairs.stream = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.pairs.stream); }},
        {"eval", "folds", [](RunConfig& c, const std::string& v) { c.folds = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.folds); }},

        {"backbone", "stage_channels",
         [](RunConfig& c, const std::string& v) { c.backbone.stage_channels = parse_four(v); },
         [](const RunConfig& c) { return render_list(c.backbone.stage_channels); }},
        {"backbone", "blocks_per_stage",
         [](RunConfig& c, const std::string& v) { c.backbone.blocks_per_stage = parse_four(v); },
         [](const RunConfig& c) { return render_list(c.backbone.blocks_per_stage); }},
        {"backbone", "embedding_dim", [](RunConfig& c, const std::string& v) { c.backbone.embedding_dim = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.backbone.embedding_dim); }},
        {"backbone", "seed", [](RunConfig& c, const std::string& v) { c.model_seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.model_seed); }},

        {"pam", "placement",
         [](RunConfig& c, const std::string& v) {
             parse_placement(v);
             c.placement = v;
         },
         [](const RunConfig& c) { return c.placement; }},
        {"pam", "conv",
         [](RunConfig& c, const std::string& v) {
             if (v != "depthwise" && v != "dense")
                 throw std::invalid_argument("expected depthwise or dense, got '" + v + "'");
             c.model.pam.conv_kind = v == "dense" ? ConvKind::dense : ConvKind::depthwise;
         },
         [](const RunConfig& c) { return std::string(to_string(c.model.pam.conv_kind)); }},
        {"pam", "cam",
         [](RunConfig& c, const std::string& v) {
             if (v != "cbam" && v != "se")
                 throw std::invalid_argument("expected cbam or se, got '" + v + "'");
             c.model.pam.cam_variant = v == "se" ? CamVariant::se : CamVariant::cbam;
         },
         [](const RunConfig& c) { return std::string(to_string(c.model.pam.cam_variant)); }},
        {"pam", "identity_mapping",
         [](RunConfig& c, const std::string& v) { c.model.pam.cam_identity_mapping = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.model.pam.cam_identity_mapping); }},
        {"pam", "reduction", [](RunConfig& c, const std::string& v) { c.model.pam.reduction = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.model.pam.reduction); }},
        {"pam", "use_drm", [](RunConfig& c, const std::string& v) { c.model.pam.use_drm = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.model.pam.use_drm); }},
        {"pam", "use_cam", [](RunConfig& c, const std::string& v) { c.model.pam.use_cam = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.model.pam.use_cam); }},
        {"pam", "gate",
         [](RunConfig& c, const std::string& v) {
             if (v != "soft" && v != "fixed-one")
                 throw std::invalid_argument("expected soft or fixed-one, got '" + v + "'");
             c.model.gate_mode = v == "soft" ? GateMode::soft : GateMode::fixed_one;
         },
         [](const RunConfig& c) { return std::string(to_string(c.model.gate_mode)); }},
        {"pam", "k_slope", [](RunConfig& c, const std::string& v) { c.model.gate.k_slope = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.model.gate.k_slope); }},
        {"pam", "dream", [](RunConfig& c, const std::string& v) { c.model.dream_head = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.model.dream_head); }},

        {"train", "scale", [](RunConfig& c, const std::string& v) { c.train.margin.scale = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.margin.scale); }},
        {"train", "margin", [](RunConfig& c, const std::string& v) { c.train.margin.margin = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.margin.margin); }},
        {"train", "lr", [](RunConfig& c, const std::string& v) { c.train.lr.initial = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.lr.initial); }},
        {"train", "lr_decay_epochs", [](RunConfig& c, const std::string& v) { c.train.lr.decay_epochs = parse_list(v); },
         [](const RunConfig& c) { return render_list(c.train.lr.decay_epochs); }},
        {"train", "lr_factor", [](RunConfig& c, const std::string& v) { c.train.lr.factor = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.lr.factor); }},
        {"train", "momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.momentum); }},
        {"train", "weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = parse_double(v); },
         [](const RunConfig& c) { return render_double(c.train.weight_decay); }},
        {"train", "batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"train", "epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train", "seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        {"train", "shuffle", [](RunConfig& c, const std::string& v) { c.train.shuffle = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.train.shuffle); }},
        {"train", "flip", [](RunConfig& c, const std::string& v) { c.train.flip_augment = parse_bool(v); },
         [b](const RunConfig& c) { return b(c.train.flip_augment); }},

        {"output", "dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
         [](const RunConfig& c) { return c.output_dir; }},
    };
    return table;
}

std::string join(const std::vector<std::string>& lines)
{
    std::string out = "invalid configuration:";
    for (const auto& l : lines)
        out += "\n  " + l;
    return out;
}

} // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join(errors)), errors_(std::move(errors))
{
}

RunConfig RunConfig::defaults()
{
    RunConfig c;
    c.model.pam.reduction = 4;
    return c;
}

std::vector<std::string> RunConfig::problems() const
{
    std::vector<std::string> out;
    auto check = [&](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            out.push_back(e.what());
        }
    };
    check([&] { dataset.validate(); });
    check([&] { pairs.validate(); });
    check([&] { train.validate(); });
    BackboneConfig bb = backbone;
    bb.input_size = dataset.image_size;
    check([&] { bb.validate(); });
    if (folds < 2)
        out.push_back("eval.folds must be at least 2");
    if (model.pam.reduction == 0)
        out.push_back("pam.reduction must be positive");
    if (!(model.gate.k_slope > 0.0))
        out.push_back("pam.k_slope must be positive");
    try {
        const PlacementPlan plan = parse_placement(placement);
        for (std::size_t s : plan.stages())
            if (model.pam.use_cam && model.pam.reduction != 0 && backbone.stage_channels[s - 1] % model.pam.reduction != 0)
                out.push_back("pam.reduction " + std::to_string(model.pam.reduction) + " does not divide stage " +
                              std::to_string(s) + " channels " + std::to_string(backbone.stage_channels[s - 1]));
    } catch (const std::exception& e) {
        out.push_back(std::string("pam.placement: ") + e.what());
    }
    if (output_dir.empty())
        out.push_back("output.dir must not be empty");
    return out;
}

RunConfig parse_run_config(std::string_view text)
{
    RunConfig cfg = RunConfig::defaults();
    std::vector<std::string> errors;
    std::set<std::string> sections;
    for (const auto& f : fields())
        sections.insert(f.section);
    std::set<std::string> seen;

    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                errors.push_back(where + "malformed section header '" + line + "'");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section))
                errors.push_back(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(where + "expected 'key = value', got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            errors.push_back(where + "key '" + key + "' appears before any section");
            continue;
        }
        if (!sections.count(section))
            continue; // already reported
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (section == f.section && key == f.key)
                field = &f;
        if (!field) {
            errors.push_back(where + "unknown key '" + key + "' in [" + section + "]");
            continue;
        }
        if (!seen.insert(section + "." + key).second) {
            errors.push_back(where + "duplicate key " + section + "." + key);
            continue;
        }
        try {
            field->set(cfg, value);
        } catch (const std::exception& e) {
            errors.push_back(where + section + "." + key + ": " + e.what());
        }
    }
    for (auto& p : cfg.problems())
        errors.push_back(std::move(p));
    if (!errors.empty())
        throw ConfigError(std::move(errors));
    cfg.backbone.input_size = cfg.dataset.image_size;
    cfg.backbone.input_channels = 1;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string render_run_config(const RunConfig& cfg)
{
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            section = f.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

} // namespace pam
