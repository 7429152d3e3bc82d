#include "doctest.h"

#include <cmath>
#include <limits>

#include "pam/blocks.hpp"
#include "test_util.hpp"

using namespace pam;
using pam::test::random_tensor;

namespace {

Tensor project(const Tensor& y, std::uint64_t seed)
{
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng, -1.0, 1.0, false)));
}

std::vector<NamedTensor> with_input(std::vector<NamedTensor> params, const Tensor& x)
{
    params.insert(params.begin(), {"input", x});
    return params;
}

std::vector<double> random_gates(std::size_t n, Rng& rng)
{
    std::vector<double> g(n);
    for (double& v : g)
        v = soft_gate(uniform(rng, -90.0, 90.0));
    return g;
}

// Perturbs affine terms away from their (1, 0) initialization so that the
// gradient check exercises them non-trivially.
void jitter_bn(BatchNormState& bn, Rng& rng)
{
    for (double& v : bn.gamma.mutable_data())
        v = uniform(rng, 0.5, 1.5);
    for (double& v : bn.beta.mutable_data())
        v = uniform(rng, -0.5, 0.5);
}

} // namespace

TEST_CASE("soft gate closed-form values")
{
    CHECK(soft_gate(45.0) == 0.5);
    CHECK(soft_gate(-45.0) == 0.5);
    // Reference values evaluated at 40 significant digits.
    CHECK(std::abs(soft_gate(90.0) - 0.9999546021312975656) <= 1e-12);
    CHECK(std::abs(soft_gate(0.0) - 4.539786870243439450e-05) <= 1e-12);
    CHECK(std::abs(soft_gate(60.0) - 0.9655548043337888269) <= 1e-12);
    CHECK(std::abs(soft_gate(30.0) - 0.03444519566621117310) <= 1e-12);
    CHECK(soft_gate(-60.0) == soft_gate(60.0));
    CHECK(std::abs(soft_gate(90.0, GateConfig{5.0}) - 1.0 / (1.0 + std::exp(-5.0))) <= 1e-15);
}

TEST_CASE("soft gate is even, strictly increasing in |yaw| and inside (0,1)")
{
    double previous = -1.0;
    for (int i = 0; i <= 900; ++i) {
        const double y = 0.1 * i;
        const double g = soft_gate(y);
        CHECK(g > 0.0);
        CHECK(g < 1.0);
        CHECK(g == soft_gate(-y));
        CHECK(g > previous);
        previous = g;
    }
}

TEST_CASE("soft gate rejects yaw outside the domain")
{
    CHECK_THROWS_AS(soft_gate(90.0001), std::invalid_argument);
    CHECK_THROWS_AS(soft_gate(-91.0), std::invalid_argument);
    CHECK_THROWS_AS(soft_gate(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
    CHECK_THROWS_AS(soft_gate(std::numeric_limits<double>::infinity()), std::invalid_argument);
}

TEST_CASE("DRM: zero gate is identity, unit gate adds the full residual")
{
    Rng rng(21);
    auto drm = DrmParams::make(8, ConvKind::depthwise, rng);
    Tensor x = random_tensor({2, 8, 5, 5}, rng);

    const std::vector<double> zero{0.0, 0.0};
    Tensor y = drm_forward(x, drm, zero);
    CHECK(test::max_abs_diff(y.data(), x.data()) == 0.0);

    const std::vector<double> one{1.0, 1.0};
    Tensor full = drm_forward(x, drm, one);
    Tensor expected = add(x, drm_residual(x, drm));
    CHECK(test::max_abs_diff(full.data(), expected.data()) == 0.0);
    CHECK(full.shape() == x.shape());

    CHECK_THROWS_AS(drm_forward(random_tensor({2, 4, 5, 5}, rng), drm, one), ShapeError);
    CHECK_THROWS_AS(drm_forward(x, drm, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("DRM gate scales only the residual branch per sample")
{
    Rng rng(22);
    auto drm = DrmParams::make(4, ConvKind::depthwise, rng);
    drm.set_mode(Mode::eval);
    Tensor x = random_tensor({2, 4, 3, 3}, rng);
    const std::vector<double> gates{0.25, 0.75};
    Tensor y = drm_forward(x, drm, gates);
    Tensor r = drm_residual(x, drm);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.at(i) == doctest::Approx(x.at(i) + gates[i / 36] * r.at(i)).epsilon(1e-14));
}

TEST_CASE("CAM")
{
    Rng rng(31);
    SUBCASE("zero MLP weights give attention 0.5")
    {
        auto cam = CamParams::make(16, CamVariant::cbam, false, 16, rng);
        for (double& v : cam.mlp_w1.mutable_data())
            v = 0.0;
        for (double& v : cam.mlp_w2.mutable_data())
            v = 0.0;
        Tensor x = random_tensor({2, 16, 3, 3}, rng);
        Tensor y = cam_forward(x, cam);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(y.at(i) == 0.5 * x.at(i));
    }
    SUBCASE("attention is equivariant under channel permutation")
    {
        for (CamVariant variant : {CamVariant::se, CamVariant::cbam}) {
            auto cam = CamParams::make(32, variant, false, 16, rng);
            Tensor x = random_tensor({2, 32, 3, 3}, rng);
            // Swap channels 3 and 7 in the input and in the MLP weights.
            auto swap_input = [](const Tensor& t) {
                std::vector<double> v(t.data().begin(), t.data().end());
                for (std::size_t b = 0; b < 2; ++b)
                    for (std::size_t i = 0; i < 9; ++i)
                        std::swap(v[(b * 32 + 3) * 9 + i], v[(b * 32 + 7) * 9 + i]);
                return Tensor::from(t.shape(), v);
            };
            CamParams swapped = cam;
            std::vector<double> w1(cam.mlp_w1.data().begin(), cam.mlp_w1.data().end());
            std::vector<double> w2(cam.mlp_w2.data().begin(), cam.mlp_w2.data().end());
            for (std::size_t h = 0; h < 2; ++h)
                std::swap(w1[h * 32 + 3], w1[h * 32 + 7]);
            for (std::size_t h = 0; h < 2; ++h)
                std::swap(w2[3 * 2 + h], w2[7 * 2 + h]);
            swapped.mlp_w1 = Tensor::from(cam.mlp_w1.shape(), w1);
            swapped.mlp_w2 = Tensor::from(cam.mlp_w2.shape(), w2);
            Tensor a = cam_attention(x, cam);
            Tensor b = cam_attention(swap_input(x), swapped);
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t c = 0; c < 32; ++c) {
                    const std::size_t pc = c == 3 ? 7 : c == 7 ? 3 : c;
                    CHECK(b.at(n * 32 + pc) == doctest::Approx(a.at(n * 32 + c)).epsilon(1e-14));
                }
        }
    }
    SUBCASE("two channels with identical content and tied weights get identical attention")
    {
        auto cam = CamParams::make(16, CamVariant::cbam, false, 16, rng);
        auto w1 = cam.mlp_w1.mutable_data();
        auto w2 = cam.mlp_w2.mutable_data();
        w1[5] = w1[2];
        w2[5] = w2[2];
        std::vector<double> v(16 * 4);
        for (double& e : v)
            e = uniform(rng, -1.0, 1.0);
        for (std::size_t i = 0; i < 4; ++i)
            v[5 * 4 + i] = v[2 * 4 + i];
        Tensor a = cam_attention(Tensor::from({1, 16, 2, 2}, v), cam);
        CHECK(a.at(5) == a.at(2));
    }
    SUBCASE("without identity mapping the output is bounded by the input")
    {
        for (int trial = 0; trial < 10; ++trial) {
            auto cam = CamParams::make(16, trial % 2 ? CamVariant::se : CamVariant::cbam, false, 16, rng);
            Tensor x = random_tensor({2, 16, 3, 3}, rng, -10.0, 10.0);
            Tensor y = cam_forward(x, cam);
            Tensor a = cam_attention(x, cam);
            for (double v : a.data()) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
            for (std::size_t i = 0; i < x.numel(); ++i)
                CHECK(std::abs(y.at(i)) <= std::abs(x.at(i)));
        }
    }
    SUBCASE("identity mapping adds the input back")
    {
        auto cam = CamParams::make(16, CamVariant::cbam, true, 16, rng);
        Tensor x = random_tensor({1, 16, 2, 2}, rng);
        Tensor a = cam_attention(x, cam);
        Tensor y = cam_forward(x, cam);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(y.at(i) == doctest::Approx(x.at(i) + x.at(i) * a.at(i / 4)).epsilon(1e-14));
    }
    SUBCASE("reduction must divide the channel count")
    {
        CHECK_THROWS_AS(CamParams::make(24, CamVariant::cbam, false, 16, rng), std::invalid_argument);
        CHECK_THROWS_AS(CamParams::make(16, CamVariant::cbam, false, 0, rng), std::invalid_argument);
    }
}

TEST_CASE("PAM composes DRM then CAM")
{
    Rng rng(41);
    auto pam = PamParams::make(16, PamOptions{}, rng);
    Tensor x = random_tensor({2, 16, 4, 4}, rng);
    const std::vector<double> zero{0.0, 0.0};
    Tensor y = pam_forward(x, pam, zero);
    Tensor expected = cam_forward(x, *pam.cam);
    CHECK(test::max_abs_diff(y.data(), expected.data()) == 0.0);

    const std::vector<double> gates{0.3, 0.9};
    Tensor composed = cam_forward(drm_forward(x, *pam.drm, gates), *pam.cam);
    CHECK(test::max_abs_diff(pam_forward(x, pam, gates).data(), composed.data()) == 0.0);
    CHECK(test::max_abs_diff(pam_forward(x, *pam.drm, *pam.cam, gates).data(), composed.data()) == 0.0);

    PamOptions drm_only;
    drm_only.use_cam = false;
    auto only = PamParams::make(16, drm_only, rng);
    CHECK_FALSE(only.cam.has_value());
    CHECK(count_trainable(only.parameters()) == 23 * 16);
}

TEST_CASE("trainable counts match the closed forms")
{
    Rng rng(5);
    for (std::size_t c = 16; c <= 512; c += 16) {
        CAPTURE(c);
        auto drm = DrmParams::make(c, ConvKind::depthwise, rng);
        auto cam = CamParams::make(c, CamVariant::cbam, false, 16, rng);
        auto pam = PamParams::make(c, PamOptions{}, rng);
        CHECK(count_trainable(drm.parameters()) == 23 * c);
        CHECK(count_trainable(cam.parameters()) == c * c / 8);
        CHECK(count_trainable(pam.parameters()) == 23 * c + c * c / 8);
        CHECK(count_trainable(pam.parameters()) == pam_param_formula(c));
    }
    CHECK(count_trainable(PamParams::make(64, PamOptions{}, rng).parameters()) == 1984);
    PamOptions dense;
    dense.conv_kind = ConvKind::dense;
    CHECK(count_trainable(PamParams::make(64, dense, rng).parameters()) == pam_param_formula(64, dense));
    CHECK(pam_param_formula(64, dense) == 5 * 64 + 18 * 64 * 64 + 64 * 64 / 8);
    // BN running statistics are not trainable and are not counted.
    auto drm = DrmParams::make(8, ConvKind::depthwise, rng);
    CHECK(drm.bn1.running_mean.size() == 8);
    CHECK(count_trainable(drm.parameters()) == 184);
}

TEST_CASE("DREAM")
{
    Rng rng(51);
    auto dream = DreamParams::make(512, rng);
    CHECK(count_trainable(dream.parameters()) == 525312);
    CHECK(dream_param_formula(512) == 525312);
    Tensor e = random_tensor({3, 512}, rng);
    Tensor y = dream_forward(e, dream, std::vector<double>{0.0, 0.0, 0.0});
    CHECK(test::max_abs_diff(y.data(), e.data()) == 0.0);
    CHECK_THROWS_AS(dream_forward(random_tensor({3, 256}, rng), dream, std::vector<double>{0, 0, 0}), ShapeError);
}

TEST_CASE("block gradient checks across seeds")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        Rng rng(500 + seed);

        auto drm = DrmParams::make(8, ConvKind::depthwise, rng);
        jitter_bn(drm.bn1, rng);
        jitter_bn(drm.bn2, rng);
        Tensor x = random_tensor({2, 8, 5, 5}, rng);
        auto gates = random_gates(2, rng);
        CHECK(grad_check([&] { return project(drm_forward(x, drm, gates), seed); }, with_input(drm.parameters(), x))
                  .max_rel_error <= 1e-5);

        auto drm_dense = DrmParams::make(3, ConvKind::dense, rng);
        Tensor xd = random_tensor({2, 3, 4, 4}, rng);
        CHECK(grad_check([&] { return project(drm_forward(xd, drm_dense, gates), seed); },
                         with_input(drm_dense.parameters(), xd))
                  .max_rel_error <= 1e-5);

        for (CamVariant variant : {CamVariant::se, CamVariant::cbam})
            for (bool identity : {false, true}) {
                CAPTURE(to_string(variant));
                CAPTURE(identity);
                auto cam = CamParams::make(16, variant, identity, 16, rng);
                Tensor xc = random_tensor({2, 16, 4, 4}, rng);
                CHECK(grad_check([&] { return project(cam_forward(xc, cam), seed); }, with_input(cam.parameters(), xc))
                          .max_rel_error <= 1e-5);
            }

        PamOptions options;
        options.reduction = 8;
        auto pam = PamParams::make(16, options, rng);
        jitter_bn(pam.drm->bn1, rng);
        jitter_bn(pam.drm->bn2, rng);
        Tensor xp = random_tensor({2, 16, 6, 6}, rng);
        CHECK(grad_check([&] { return project(pam_forward(xp, pam, gates), seed); }, with_input(pam.parameters(), xp))
                  .max_rel_error <= 1e-5);

        auto dream = DreamParams::make(12, rng);
        Tensor e = random_tensor({2, 12}, rng);
        CHECK(grad_check([&] { return project(dream_forward(e, dream, gates), seed); },
                         with_input(dream.parameters(), e))
                  .max_rel_error <= 1e-5);
    }
}

TEST_CASE("full PAM on a 2x8x6x6 input passes the gradient check")
{
    Rng rng(8);
    PamOptions options;
    options.reduction = 4;
    auto pam = PamParams::make(8, options, rng);
    Tensor x = random_tensor({2, 8, 6, 6}, rng);
    const std::vector<double> gates{soft_gate(70.0), soft_gate(-20.0)};
    auto r = grad_check([&] { return project(pam_forward(x, pam, gates), 1); }, with_input(pam.parameters(), x));
    CHECK(r.max_rel_error <= 1e-5);
    CHECK(r.groups.size() == 10);
}
