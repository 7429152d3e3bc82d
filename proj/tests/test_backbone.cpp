#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "pam/backbone.hpp"
#include "pam/checkpoint.hpp"
#include "test_util.hpp"

using namespace pam;
using pam::test::random_tensor;

namespace {

Tensor toy_images(std::size_t batch, Rng& rng, const BackboneConfig& cfg = BackboneConfig::toy())
{
    return random_tensor({batch, cfg.input_channels, cfg.input_size, cfg.input_size}, rng, -1.0, 1.0, false);
}

std::vector<double> flat_params(const Model& m)
{
    std::vector<double> out;
    for (const auto& p : m.parameters())
        out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

// DRM output scales start at zero; give them unit scale so that the
// residual branch contributes.
void wake_drm(Model& m)
{
    for (const auto& p : m.parameters())
        if (p.name.find("drm.bn2.gamma") != std::string::npos)
            for (Tensor t = p.tensor; double& v : t.mutable_data())
                v = 1.0;
}

} // namespace

TEST_CASE("placement parsing")
{
    CHECK(parse_placement("PAM12").stages() == std::vector<std::size_t>{1, 2});
    CHECK(parse_placement("PAM124").stages() == std::vector<std::size_t>{1, 2, 4});
    CHECK(parse_placement("PAM1234").stages() == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(parse_placement("baseline").empty());
    for (const char* bad : {"PAM", "PAM21", "PAM115", "PAM5", "PAM0", "pam12", "PAM12x", "", "baseline2", "XAM12"})
        CHECK_THROWS_AS(parse_placement(bad), std::invalid_argument);
}

TEST_CASE("placement text round-trips for every stage subset")
{
    for (unsigned mask = 0; mask < 16; ++mask) {
        PlacementPlan plan({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0});
        CHECK(parse_placement(render_placement(plan)) == plan);
    }
    CHECK(render_placement(PlacementPlan{}) == "baseline");
}

TEST_CASE("config validation")
{
    auto cfg = BackboneConfig::toy();
    CHECK_NOTHROW(cfg.validate());
    cfg.stage_channels = {16, 8, 32, 64};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = BackboneConfig::toy();
    cfg.input_size = 8;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(BackboneConfig::reference().stage_extent(4) == 7);
    CHECK(BackboneConfig::toy().stage_extent(1) == 16);
}

TEST_CASE("PAM parameter delta equals the closed form for every plan")
{
    auto cfg = BackboneConfig::toy();
    cfg.stage_channels = {16, 32, 48, 64};
    const Model base = Model::build(cfg, PlacementPlan{}, {}, 1);
    CHECK(base.pam_trainable_count() == 0);
    for (unsigned mask = 1; mask < 16; ++mask) {
        PlacementPlan plan({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0});
        const Model m = Model::build(cfg, plan, {}, 1);
        std::size_t expected = 0;
        for (std::size_t s : plan.stages())
            expected += 23 * cfg.stage_channels[s - 1] + cfg.stage_channels[s - 1] * cfg.stage_channels[s - 1] / 8;
        CHECK(m.trainable_count() - base.trainable_count() == expected);
        CHECK(m.pam_trainable_count() == expected);
    }
}

TEST_CASE("reduction must divide the channels of selected stages")
{
    auto cfg = BackboneConfig::toy();
    CHECK_THROWS_AS(Model::build(cfg, parse_placement("PAM1"), {}, 0), std::invalid_argument); // 8 % 16 != 0
    ModelOptions opt;
    opt.pam.reduction = 8;
    CHECK_NOTHROW(Model::build(cfg, parse_placement("PAM1234"), opt, 0));
    CHECK_NOTHROW(Model::build(cfg, parse_placement("PAM234"), {}, 0));
}

TEST_CASE("equal seeds give bitwise-identical parameters; trunk does not depend on placement")
{
    ModelOptions opt;
    opt.pam.reduction = 8;
    const auto cfg = BackboneConfig::toy();
    const Model a = Model::build(cfg, parse_placement("PAM12"), opt, 42);
    const Model b = Model::build(cfg, parse_placement("PAM12"), opt, 42);
    CHECK(flat_params(a) == flat_params(b));
    const Model c = Model::build(cfg, parse_placement("PAM12"), opt, 43);
    CHECK(flat_params(a) != flat_params(c));

    const Model base = Model::build(cfg, PlacementPlan{}, opt, 42);
    for (const auto& p : base.parameters()) {
        bool found = false;
        for (const auto& q : a.parameters())
            if (q.name == p.name) {
                found = true;
                CHECK(std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()) ==
                      std::vector<double>(q.tensor.data().begin(), q.tensor.data().end()));
            }
        CHECK(found);
    }
}

TEST_CASE("forward shapes and eval determinism")
{
    Rng rng(3);
    ModelOptions opt;
    opt.pam.reduction = 8;
    for (const char* text : {"baseline", "PAM12", "PAM1234"}) {
        Model m = Model::build(BackboneConfig::toy(), parse_placement(text), opt, 7);
        Tensor x = toy_images(3, rng);
        const std::vector<double> yaws{-80.0, 0.0, 45.0};
        Tensor train = m.forward_extract(x, yaws, Mode::train);
        CHECK(train.shape() == Shape{3, 64});
        NoGradGuard guard;
        Tensor e1 = m.forward_extract(x, yaws, Mode::eval);
        Tensor e2 = m.forward_extract(x, yaws, Mode::eval);
        CHECK(std::vector<double>(e1.data().begin(), e1.data().end()) ==
              std::vector<double>(e2.data().begin(), e2.data().end()));
    }
    Model m = Model::build(BackboneConfig::toy(), PlacementPlan{}, opt, 7);
    CHECK_THROWS_AS(m.forward_extract(toy_images(2, rng), std::vector<double>{0.0, 95.0}, Mode::eval),
                    std::invalid_argument);
    CHECK_THROWS_AS(m.forward_extract(random_tensor({2, 3, 32, 32}, rng), std::vector<double>{0.0, 0.0}, Mode::eval),
                    ShapeError);
}

TEST_CASE("eval forward of single samples equals the joint batch")
{
    Rng rng(4);
    ModelOptions opt;
    opt.pam.reduction = 8;
    Model m = Model::build(BackboneConfig::toy(), parse_placement("PAM12"), opt, 9);
    // Populate running statistics with a few train-mode passes.
    for (int i = 0; i < 3; ++i)
        m.forward_extract(toy_images(4, rng), std::vector<double>{10, 20, 70, -85}, Mode::train);
    NoGradGuard guard;
    Tensor x = toy_images(3, rng);
    const std::vector<double> yaws{5.0, -50.0, 88.0};
    Tensor joint = m.forward_extract(x, yaws, Mode::eval);
    const std::size_t per = 32 * 32;
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor one = Tensor::from({1, 1, 32, 32}, std::vector<double>(x.data().begin() + static_cast<long>(b * per),
                                                                      x.data().begin() + static_cast<long>((b + 1) * per)));
        Tensor e = m.forward_extract(one, std::vector<double>{yaws[b]}, Mode::eval);
        for (std::size_t i = 0; i < 64; ++i)
            CHECK(std::abs(e.at(i) - joint.at(b * 64 + i)) <= 1e-10);
    }
}

TEST_CASE("frontal yaw leaves only the CAM recalibration active")
{
    Rng rng(5);
    ModelOptions opt;
    opt.pam.reduction = 8;
    Model pam = Model::build(BackboneConfig::toy(), parse_placement("PAM12"), opt, 11);
    Model base = Model::build(BackboneConfig::toy(), PlacementPlan{}, opt, 11);
    wake_drm(pam);
    NoGradGuard guard;
    Tensor x = toy_images(2, rng);
    const std::vector<double> yaws{0.0, 0.0};
    const std::vector<double> zero{0.0, 0.0};
    Tensor frontal = pam.forward_extract(x, yaws, Mode::eval);
    Tensor gated_off = pam.forward_with_gates(x, zero, Mode::eval);
    Tensor plain = base.forward_extract(x, yaws, Mode::eval);
    const double drm_effect = test::max_abs_diff(frontal.data(), gated_off.data());
    const double cam_effect = test::max_abs_diff(gated_off.data(), plain.data());
    CHECK(drm_effect > 0.0);
    CHECK(drm_effect < 1e-2);
    CHECK(cam_effect > 100 * drm_effect);
}

TEST_CASE("gradients reach every PAM parameter")
{
    Rng rng(6);
    ModelOptions opt;
    opt.pam.reduction = 4; // keeps two hidden units in the stage-1 MLP
    Model m = Model::build(BackboneConfig::toy(), parse_placement("PAM1234"), opt, 12);
    Tensor x = toy_images(4, rng);
    {
        // From the zero-scale start only the DRM output scale and shift (and CAM) move.
        Tensor e = m.forward_extract(x, std::vector<double>{-70.0, 60.0, 10.0, 85.0}, Mode::train);
        sum(mul(e, random_tensor(e.shape(), rng, -1, 1, false))).backward();
        for (const auto& p : m.parameters())
            if (p.name.find("drm.bn2.gamma") != std::string::npos) {
                double mag = 0.0;
                for (double g : p.tensor.grad())
                    mag += std::abs(g);
                CAPTURE(p.name);
                CHECK(mag > 0.0);
            }
        for (const auto& p : m.parameters())
            Tensor(p.tensor).zero_grad();
    }
    wake_drm(m);
    Tensor e = m.forward_extract(x, std::vector<double>{-70.0, 60.0, 10.0, 85.0}, Mode::train);
    sum(mul(e, random_tensor(e.shape(), rng, -1, 1, false))).backward();
    std::size_t pam_groups = 0;
    for (const auto& p : m.parameters()) {
        REQUIRE(p.tensor.has_grad());
        if (p.name.find(".pam.") == std::string::npos)
            continue;
        ++pam_groups;
        double mag = 0.0;
        for (double g : p.tensor.grad())
            mag += std::abs(g);
        CAPTURE(p.name);
        CHECK(mag > 0.0);
    }
    CHECK(pam_groups == 4 * 9);
}

TEST_CASE("fixed-one gate mode ignores yaw")
{
    Rng rng(7);
    ModelOptions opt;
    opt.pam.reduction = 8;
    opt.gate_mode = GateMode::fixed_one;
    Model m = Model::build(BackboneConfig::toy(), parse_placement("PAM12"), opt, 13);
    CHECK(m.gates_for(std::vector<double>{0.0, -90.0, 30.0}) == std::vector<double>{1.0, 1.0, 1.0});
    NoGradGuard guard;
    Tensor x = toy_images(1, rng);
    Tensor a = m.forward_extract(x, std::vector<double>{0.0}, Mode::eval);
    Tensor b = m.forward_with_gates(x, std::vector<double>{1.0}, Mode::eval);
    CHECK(test::max_abs_diff(a.data(), b.data()) == 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact")
{
    Rng rng(8);
    ModelOptions opt;
    opt.pam.reduction = 8;
    opt.dream_head = true;
    Model m = Model::build(BackboneConfig::toy(), parse_placement("PAM23"), opt, 14);
    m.forward_extract(toy_images(4, rng), std::vector<double>{0, 10, 50, 90}, Mode::train);
    const auto path = std::filesystem::temp_directory_path() / "pam_test_ckpt.bin";
    write_checkpoint(path, snapshot(m, "[backbone]\nseed = 14\n"));
    Checkpoint loaded = read_checkpoint(path);
    CHECK(loaded.config_text == "[backbone]\nseed = 14\n");

    Model fresh = Model::build(BackboneConfig::toy(), parse_placement("PAM23"), opt, 999);
    restore(fresh, loaded);
    CHECK(flat_params(fresh) == flat_params(m));
    auto mb = m.buffers();
    auto fb = fresh.buffers();
    REQUIRE(mb.size() == fb.size());
    for (std::size_t i = 0; i < mb.size(); ++i)
        CHECK(*mb[i].values == *fb[i].values);

    Model other = Model::build(BackboneConfig::toy(), parse_placement("PAM2"), opt, 1);
    CHECK_THROWS_AS(restore(other, loaded), CheckpointError);

    // Bump the version field (bytes 8..11) and expect a version error.
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointVersionError);
    std::filesystem::remove(path);
}
