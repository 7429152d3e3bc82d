#include "doctest.h"

#include "pam/accounting.hpp"

using namespace pam;

TEST_CASE("published deltas counted from constructed arrays")
{
    const auto checks = check_paper_deltas();
    REQUIRE(checks.size() == 8);
    for (const auto& c : checks) {
        CAPTURE(c.expected.variant);
        CHECK(c.counted == c.expected.delta);
    }
    // Independent spelling of the same numbers.
    const auto cfg = BackboneConfig::reference();
    CHECK(variant_report(cfg, parse_variant("PAM12")).total_params() == 6976);
    CHECK(variant_report(cfg, parse_variant("PAM34")).total_params() == 58624);
    CHECK(variant_report(cfg, parse_variant("PAM1234")).total_params() == 65600);
    CHECK(variant_report(cfg, parse_variant("PAM123")).total_params() == 21056);
    CHECK(variant_report(cfg, parse_variant("PAM124")).total_params() == 51520);
    CHECK(variant_report(cfg, parse_variant("PAM12-C")).total_params() == 372160);
    CHECK(variant_report(cfg, parse_variant("DREAM")).total_params() == 525312);
    CHECK(variant_report(cfg, parse_variant("baseline")).total_params() == 0);
}

TEST_CASE("count_macs")
{
    CHECK(count_macs(ConvSpec{64, 64, 3, 1, 1, 1, false}, 56, 56) == 115605504ull);
    CHECK(count_macs(ConvSpec::depthwise(64), 56, 56) == 1806336ull);
    CHECK(count_macs(ConvSpec{1, 1, 1, 1, 0, 1, false}, 1, 1) == 1);
    // stride 2, pad 1 on 7x7 gives 4x4 outputs
    CHECK(count_macs(ConvSpec{2, 4, 3, 2, 1, 1, false}, 7, 7) == 4 * 4 * 4 * 2 * 9);
    CHECK(count_macs(ConvSpec{4, 6, 3, 1, 1, 2, false}, 5, 5) == 5 * 5 * 6 * 2 * 9);
    CHECK_THROWS_AS(count_macs(ConvSpec{3, 4, 3, 1, 1, 2, false}, 5, 5), ShapeError);
    for (std::size_t c : {64, 128, 256, 512}) {
        const auto dense = count_macs(ConvSpec{c, c, 3, 1, 1, 1, false}, 14, 14);
        const auto dw = count_macs(ConvSpec::depthwise(c), 14, 14);
        CHECK(dw * c == dense);
    }
}

TEST_CASE("constructed block counts follow the closed forms")
{
    Rng rng(1);
    for (std::size_t c = 16; c <= 512; c += 16) {
        CAPTURE(c);
        const auto pam = PamParams::make(c, {}, rng);
        CHECK(count_params(pam.drm->parameters()) == 23 * c);
        CHECK(count_params(pam.cam->parameters()) == c * c / 8);
        CHECK(count_params(pam.parameters()) == 23 * c + c * c / 8);
    }
    CHECK(count_params(DreamParams::make(512, rng).parameters()) == 525312);
}

TEST_CASE("variant parsing")
{
    CHECK(parse_variant("PAM12-C").pam.conv_kind == ConvKind::dense);
    CHECK(parse_variant("PAM12-D").pam.conv_kind == ConvKind::depthwise);
    CHECK(parse_variant("PAM12").plan == parse_placement("PAM12"));
    CHECK(parse_variant("DREAM").dream);
    CHECK(parse_variant("DREAM").plan.empty());
    for (const char* bad : {"PAM12-X", "baseline-C", "DREAM2", "PAM-C", "12"})
        CHECK_THROWS_AS(parse_variant(bad), std::invalid_argument);
}

TEST_CASE("PAM MAC entries at the reference extents")
{
    const auto r = variant_report(BackboneConfig::reference(), parse_variant("PAM12"));
    REQUIRE(r.per_block.size() == 2);
    CHECK(r.per_block[0].name == "stage1.pam");
    // stage 1 ends at 56x56 with 64 channels: two depthwise convs and a shared MLP on two branches
    CHECK(r.per_block[0].macs == 2 * 56 * 56 * 64 * 9 + 2 * 2 * 64 * 4);
    CHECK(r.per_block[1].macs == 2 * 28 * 28 * 128 * 9 + 2 * 2 * 128 * 8);
    CHECK(r.total_macs() == r.per_block[0].macs + r.per_block[1].macs);
}

TEST_CASE("trunk listing agrees with the built model")
{
    for (BackboneConfig cfg : {BackboneConfig::toy(), BackboneConfig{{16, 16, 32, 48}, {2, 1, 3, 1}, 24, 3, 40}}) {
        const Model m = Model::build(cfg, PlacementPlan{}, {}, 0);
        CHECK(trunk_report(cfg).total_params() == count_params(m));
        CHECK(count_params(m) == m.trainable_count());
    }
}

TEST_CASE("compare")
{
    const auto cfg = BackboneConfig::reference();
    std::vector<CostReport> reports;
    for (const char* v : {"baseline", "PAM12", "DREAM"})
        reports.push_back(variant_report(cfg, parse_variant(v)));
    const Comparison cmp = compare(reports, "baseline");
    CHECK(cmp.ratio_reference == "PAM12");
    CHECK(cmp.row("baseline").delta_params == 0);
    CHECK(cmp.row("PAM12").delta_params == 6976);
    CHECK(cmp.row("DREAM").delta_params == 525312);
    REQUIRE(cmp.row("DREAM").ratio.has_value());
    CHECK(*cmp.row("DREAM").ratio == doctest::Approx(525312.0 / 6976.0).epsilon(1e-15));
    CHECK(*cmp.row("DREAM").ratio > 75.0);
    CHECK(525312 / 6976 == 75);

    const Comparison same = compare({reports[1], reports[1]}, "PAM12");
    CHECK(same.rows[1].delta_params == 0);
    CHECK(same.rows[1].delta_macs == 0);

    CHECK_THROWS_AS(compare(reports, "PAM34"), std::invalid_argument);
    CHECK_THROWS_AS(compare(reports, "baseline", std::string("PAM34")), std::invalid_argument);

    const std::string records = render_records(cmp);
    CHECK(records.find("variant=DREAM params=525312 macs=524288 delta_params=525312 delta_macs=524288 ratio=75.3027522936\n") !=
          std::string::npos);
    const std::string table = render_table(cmp);
    CHECK(table.find("+6976") != std::string::npos);
}

TEST_CASE("report records")
{
    CostReport r{"x", {{"a", 1, 2}, {"b", 3, 4}}};
    CHECK(render_records(r) ==
          "report=x block=a params=1 macs=2\nreport=x block=b params=3 macs=4\nreport=x block=total params=4 macs=6\n");
}
