#include "pam/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pam/accounting.hpp"
#include "pam/blocks.hpp"
#include "pam/checkpoint.hpp"
#include "pam/gradcheck_suite.hpp"
#include "pam/run_config.hpp"
#include "pam/train.hpp"

namespace pam {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

BackboneConfig profile_config(const std::string& profile)
{
    if (profile == "reference")
        return BackboneConfig::reference();
    if (profile == "toy")
        return BackboneConfig::toy();
    throw UsageError("unknown profile '" + profile + "' (expected reference or toy)");
}

// The toy stages start at 8 channels, so CAM uses the run-config reduction there.
std::size_t profile_reduction(const std::string& profile)
{
    return profile == "toy" ? RunConfig::defaults().model.pam.reduction : PamOptions{}.reduction;
}

Variant variant_or_usage(const std::string& text, bool dense, std::size_t reduction)
{
    try {
        Variant v = parse_variant(text);
        v.pam.reduction = reduction;
        if (dense && !v.plan.empty() && text.find('-') == std::string::npos) {
            v.pam.conv_kind = ConvKind::dense;
            v.label += "-C";
        }
        return v;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::vector<CostReport> reports_for(const std::vector<std::string>& variants, const std::string& profile, bool dense,
                                    bool trunk)
{
    const BackboneConfig cfg = profile_config(profile);
    std::vector<CostReport> out;
    const std::optional<CostReport> trunk_cost = trunk ? std::optional(trunk_report(cfg)) : std::nullopt;
    for (const auto& text : variants) {
        CostReport r;
        try {
            r = variant_report(cfg, variant_or_usage(text, dense, profile_reduction(profile)));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        if (trunk_cost)
            r.per_block.insert(r.per_block.begin(), trunk_cost->per_block.begin(), trunk_cost->per_block.end());
        out.push_back(std::move(r));
    }
    return out;
}

void print_eval(std::ostream& out, const VerificationResult& r)
{
    static const char* names[] = {"acc_y0_30", "acc_y30_60", "acc_y60_90"};
    out << "acc " << fmt(r.accuracy) << '\n';
    for (std::size_t b = 0; b < yaw_bucket_count; ++b)
        out << names[b] << ' ' << fmt(r.bucket_accuracy[b]) << " pairs " << r.bucket_pairs[b] << '\n';
    out << "threshold " << fmt(r.threshold) << '\n';
}

void write_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::trunc);
    os << text;
    if (!os)
        throw std::runtime_error("cannot write '" + path.string() + "'");
}

Model build_model(const RunConfig& cfg)
{
    return Model::build(cfg.backbone, parse_placement(cfg.placement), cfg.model, cfg.model_seed);
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Pose attention module toolkit"};
    app.require_subcommand(1);

    // params
    auto* params = app.add_subcommand("params", "Parameter deltas of placement variants");
    std::vector<std::string> params_variants;
    std::string params_profile = "reference";
    std::string params_conv = "depthwise";
    bool check_paper = false, params_records = false, params_trunk = false;
    params->add_option("variants", params_variants, "baseline, PAM<digits>[-C|-D] or DREAM");
    params->add_option("--profile", params_profile, "reference or toy")->check(CLI::IsMember({"reference", "toy"}));
    params->add_option("--conv", params_conv, "DRM convolution kind")->check(CLI::IsMember({"depthwise", "dense"}));
    params->add_flag("--check-paper", check_paper, "Assert the eight published deltas");
    params->add_flag("--records", params_records, "Key/value records instead of the table");
    params->add_flag("--trunk", params_trunk, "Include the plain backbone layers in every report");

    // gate-curve
    auto* gate = app.add_subcommand("gate-curve", "Soft gate coefficient over yaw as CSV");
    double gate_k = 10.0, gate_step = 1.0;
    std::string gate_out = "-";
    gate->add_option("--k", gate_k, "Gate slope");
    gate->add_option("--step", gate_step, "Yaw step in degrees");
    gate->add_option("--out", gate_out, "Output path, '-' for stdout");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::string gc_target;
    std::uint64_t gc_seed = 0;
    std::size_t gc_seeds = 10;
    double gc_tol = 1e-5;
    gc->add_option("target", gc_target, "primitive, block, loss, all or a single target")->required();
    gc->add_option("--seed", gc_seed, "First seed");
    gc->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", gc_tol, "Maximum relative error");

    // train
    auto* tr = app.add_subcommand("train", "Train on the synthetic profile");
    std::string tr_config, tr_out;
    bool emit_config = false;
    tr->add_option("--config", tr_config, "Run configuration file");
    tr->add_option("--out", tr_out, "Output directory (overrides output.dir)");
    tr->add_flag("--emit-config", emit_config, "Print the complete default configuration and exit");

    // eval
    auto* ev = app.add_subcommand("eval", "Verification accuracy of a checkpoint");
    std::string ev_ckpt, ev_config;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--config", ev_config, "Pair-set configuration (defaults to the checkpoint's own)");

    // compare
    auto* cmp = app.add_subcommand("compare", "Cost table of variants against a baseline");
    std::vector<std::string> cmp_variants;
    std::string cmp_baseline = "baseline", cmp_ratio, cmp_profile = "reference";
    bool cmp_records = false, cmp_trunk = false;
    cmp->add_option("variants", cmp_variants, "Variants to compare")->required();
    cmp->add_option("--baseline", cmp_baseline, "Label of the baseline report");
    cmp->add_option("--ratio-to", cmp_ratio, "Label whose delta is the ratio denominator");
    cmp->add_option("--profile", cmp_profile, "reference or toy")->check(CLI::IsMember({"reference", "toy"}));
    cmp->add_flag("--records", cmp_records, "Key/value records instead of the table");
    cmp->add_flag("--trunk", cmp_trunk, "Include the plain backbone layers in every report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*params) {
            std::vector<std::string> variants{"baseline"};
            for (const auto& v : params_variants)
                if (v != "baseline")
                    variants.push_back(v);
            const auto reports = reports_for(variants, params_profile, params_conv == "dense", params_trunk);
            const Comparison c = compare(reports, "baseline");
            out << (params_records ? render_records(c) : render_table(c));
            if (check_paper) {
                bool ok = true;
                for (const auto& chk : check_paper_deltas()) {
                    out << "check " << chk.expected.variant << " expected " << chk.expected.delta << " counted "
                        << chk.counted << (chk.ok() ? " ok" : " MISMATCH") << '\n';
                    ok = ok && chk.ok();
                }
                if (!ok) {
                    err << "published parameter deltas not reproduced\n";
                    return 1;
                }
            }
            return 0;
        }
        if (*gate) {
            if (!(gate_step > 0.0) || !std::isfinite(gate_step))
                throw UsageError("--step must be positive");
            if (!(gate_k > 0.0) || !std::isfinite(gate_k))
                throw UsageError("--k must be positive");
            GateConfig gcfg;
            gcfg.k_slope = gate_k;
            // Grid built outward from 0 so that every row has its mirror.
            std::vector<double> mags;
            for (std::size_t i = 0; static_cast<double>(i) * gate_step <= GateConfig::yaw_limit; ++i)
                mags.push_back(static_cast<double>(i) * gate_step);
            std::ostringstream csv;
            csv << "yaw,coefficient\n";
            for (auto it = mags.rbegin(); it != mags.rend(); ++it)
                if (*it > 0.0)
                    csv << fmt(-*it) << ',' << fmt(soft_gate(-*it, gcfg)) << '\n';
            for (double m : mags)
                csv << fmt(m) << ',' << fmt(soft_gate(m, gcfg)) << '\n';
            if (gate_out == "-") {
                out << csv.str();
            } else {
                std::ofstream os(gate_out, std::ios::trunc);
                os << csv.str();
                if (!os) {
                    err << "cannot write '" << gate_out << "'\n";
                    return 1;
                }
            }
            return 0;
        }
        if (*gc) {
            GradCheckReport report;
            try {
                report = run_gradcheck_suite(gc_target, gc_seed, gc_seeds);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            // Per target, case and parameter group: worst error over seeds.
            std::vector<std::pair<std::string, double>> rows;
            for (const auto& c : report.cases)
                for (const auto& g : c.result.groups) {
                    const std::string key = c.target + " " + c.name + " " + g.name;
                    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == key; });
                    if (it == rows.end())
                        rows.emplace_back(key, g.max_rel_error);
                    else
                        it->second = std::max(it->second, g.max_rel_error);
                }
            for (const auto& [key, e] : rows)
                out << key << ' ' << fmt(e) << (e <= gc_tol ? "" : " FAIL") << '\n';
            out << "max_rel_error " << fmt(report.max_rel_error()) << " over " << report.cases.size() << " cases ("
                << gc_seeds << " seeds)\n";
            if (!report.passed(gc_tol)) {
                err << "gradient check failed: tolerance " << fmt(gc_tol) << '\n';
                return 1;
            }
            return 0;
        }
        if (*tr) {
            if (emit_config) {
                out << render_run_config(RunConfig::defaults());
                return 0;
            }
            RunConfig cfg = tr_config.empty() ? parse_run_config(render_run_config(RunConfig::defaults()))
                                              : load_run_config(tr_config);
            if (!tr_out.empty())
                cfg.output_dir = tr_out;
            const std::filesystem::path dir = cfg.output_dir;
            std::filesystem::create_directories(dir);
            const std::string resolved = render_run_config(cfg);
            write_file(dir / "config.resolved.ini", resolved);

            const Dataset data = generate_dataset(cfg.dataset);
            const PairSet pairs = make_pair_set(cfg.dataset, cfg.pairs);
            Model model = build_model(cfg);
            const TrainResult result = train(model, data, &pairs, cfg.train, [&](const EpochMetrics& m) {
                out << "epoch " << m.epoch << " loss " << fmt(m.loss) << " acc " << fmt(m.eval->accuracy)
                    << " acc_y60_90 " << fmt(m.eval->bucket_accuracy[2]) << std::endl;
            });
            write_file(dir / "metrics.csv", metrics_csv(result.history));
            write_checkpoint(dir / "checkpoint.bin", snapshot(model, resolved));
            out << "initial_loss " << fmt(result.initial_loss) << '\n';
            out << "margin_clamps " << result.margin_clamps << '\n';
            // The final number is recomputed from the model state as saved,
            // the same way `eval` computes it.
            print_eval(out, evaluate_verification(model, pairs, cfg.folds));
            out << "wrote " << (dir / "checkpoint.bin").string() << ", " << (dir / "metrics.csv").string() << ", "
                << (dir / "config.resolved.ini").string() << '\n';
            return 0;
        }
        if (*ev) {
            const Checkpoint ckpt = read_checkpoint(ev_ckpt);
            const RunConfig trained = parse_run_config(ckpt.config_text);
            const RunConfig pairs_cfg = ev_config.empty() ? trained : load_run_config(ev_config);
            Model model = build_model(trained);
            restore(model, ckpt);
            const PairSet pairs = make_pair_set(pairs_cfg.dataset, pairs_cfg.pairs);
            print_eval(out, evaluate_verification(model, pairs, pairs_cfg.folds));
            return 0;
        }
        if (*cmp) {
            if (std::find(cmp_variants.begin(), cmp_variants.end(), cmp_baseline) == cmp_variants.end() &&
                cmp_baseline == "baseline")
                cmp_variants.insert(cmp_variants.begin(), "baseline");
            const auto reports = reports_for(cmp_variants, cmp_profile, false, cmp_trunk);
            Comparison c;
            try {
                c = compare(reports, cmp_baseline,
                            cmp_ratio.empty() ? std::nullopt : std::optional<std::string>(cmp_ratio));
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            out << (cmp_records ? render_records(c) : render_table(c));
            return 0;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace pam
