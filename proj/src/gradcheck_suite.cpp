#include "pam/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <stdexcept>

#include "pam/blocks.hpp"
#include "pam/margin_loss.hpp"

namespace pam {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(numel(shape));
    for (double& x : v)
        x = uniform(rng, lo, hi);
    return Tensor::from(shape, std::move(v), true);
}

// Contracts an output with fixed random weights so every output coordinate
// contributes to the scalar being checked.
Tensor project(const Tensor& y, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> w(y.numel());
    for (double& v : w)
        v = uniform(rng, -1.0, 1.0);
    return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

std::vector<NamedTensor> with_input(std::vector<NamedTensor> params, const Tensor& x, const char* name = "input")
{
    params.insert(params.begin(), {name, x});
    return params;
}

void jitter_bn(BatchNormState& bn, Rng& rng)
{
    for (double& v : bn.gamma.mutable_data())
        v = uniform(rng, 0.5, 1.5);
    for (double& v : bn.beta.mutable_data())
        v = uniform(rng, -0.5, 0.5);
}

std::vector<double> random_gates(std::size_t n, Rng& rng)
{
    std::vector<double> g(n);
    for (double& v : g)
        v = soft_gate(uniform(rng, -90.0, 90.0));
    return g;
}

using CaseFn = std::function<void(std::uint64_t seed, std::vector<std::pair<std::string, GradCheckResult>>& out)>;

struct Target {
    const char* name;
    const char* group;
    CaseFn run;
};

const std::vector<Target>& targets()
{
    static const std::vector<Target> table{
        {"conv2d", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             const std::size_t c = 1 + uniform_index(rng, 4);
             Tensor x = random_tensor({2, c, 2 + uniform_index(rng, 4), 2 + uniform_index(rng, 4)}, rng);
             const ConvSpec dense{c, 2, 1 + 2 * uniform_index(rng, 2), 1 + uniform_index(rng, 2), 1, 1, true};
             Tensor w = random_tensor(dense.weight_shape(), rng);
             Tensor b = random_tensor({2}, rng);
             out.emplace_back("dense", grad_check([&] { return project(conv2d(x, w, b, dense), seed); },
                                                  {{"x", x}, {"weight", w}, {"bias", b}}));
             const ConvSpec dw = ConvSpec::depthwise(c);
             Tensor k = random_tensor(dw.weight_shape(), rng);
             out.emplace_back("depthwise", grad_check([&] { return project(conv2d(x, k, std::nullopt, dw), seed); },
                                                      {{"x", x}, {"weight", k}}));
         }},
        {"batch_norm", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             const std::size_t c = 1 + uniform_index(rng, 4);
             Tensor x = random_tensor({2, c, 3, 3}, rng);
             auto bn = BatchNormState::make(c);
             jitter_bn(bn, rng);
             for (Mode mode : {Mode::train, Mode::eval}) {
                 bn.mode = mode;
                 out.emplace_back(mode == Mode::train ? "train" : "eval",
                                  grad_check([&] { return project(batch_norm(x, bn), seed); },
                                             {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}}));
             }
         }},
        {"prelu", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor x = random_tensor({2, 3, 3, 3}, rng);
             Tensor a = random_tensor({3}, rng, 0.0, 0.5);
             out.emplace_back("prelu", grad_check([&] { return project(prelu(x, a), seed); },
                                                  {{"x", x}, {"slope", a}}));
         }},
        {"global_pool", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor x = random_tensor({2, 3, 3, 4}, rng);
             out.emplace_back("avg", grad_check([&] { return project(global_pool(x, PoolKind::avg), seed); },
                                                {{"x", x}}));
             out.emplace_back("max", grad_check([&] { return project(global_pool(x, PoolKind::max), seed); },
                                                {{"x", x}}));
         }},
        {"affine", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor x = random_tensor({3, 5}, rng);
             Tensor w = random_tensor({4, 5}, rng);
             Tensor b = random_tensor({4}, rng);
             out.emplace_back("affine", grad_check([&] { return project(affine(x, w, b), seed); },
                                                   {{"x", x}, {"weight", w}, {"bias", b}}));
         }},
        {"elementwise", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor x = random_tensor({3, 4}, rng);
             Tensor y = random_tensor({3, 4}, rng);
             Tensor img = random_tensor({3, 4, 2, 2}, rng);
             Tensor a = random_tensor({3, 4}, rng);
             std::vector<double> s{uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)};
             out.emplace_back("add_mul_sigmoid_scale",
                              grad_check([&] { return project(scale_per_sample(add(mul(x, y), sigmoid(y)), s), seed); },
                                         {{"x", x}, {"y", y}}));
             out.emplace_back("mul_channels", grad_check([&] { return project(mul_channels(img, a), seed); },
                                                         {{"x", img}, {"a", a}}));
             out.emplace_back("relu_flatten", grad_check([&] { return project(relu(flatten(img)), seed); },
                                                         {{"x", img}}));
         }},
        {"l2_normalize", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor x = random_tensor({3, 5}, rng);
             out.emplace_back("l2_normalize", grad_check([&] { return project(l2_normalize(x), seed); }, {{"x", x}}));
         }},
        {"cross_entropy", "primitive",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor z = random_tensor({3, 5}, rng, -3.0, 3.0);
             std::vector<std::size_t> labels{uniform_index(rng, 5), uniform_index(rng, 5), uniform_index(rng, 5)};
             out.emplace_back("cross_entropy", grad_check([&] { return cross_entropy(z, labels); }, {{"logits", z}}));
         }},
        {"drm", "block",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             auto drm = DrmParams::make(8, ConvKind::depthwise, rng);
             jitter_bn(drm.bn1, rng);
             jitter_bn(drm.bn2, rng);
             Tensor x = random_tensor({2, 8, 5, 5}, rng);
             const auto gates = random_gates(2, rng);
             out.emplace_back("depthwise", grad_check([&] { return project(drm_forward(x, drm, gates), seed); },
                                                      with_input(drm.parameters(), x)));
             auto dense = DrmParams::make(3, ConvKind::dense, rng);
             jitter_bn(dense.bn2, rng);
             Tensor xd = random_tensor({2, 3, 4, 4}, rng);
             out.emplace_back("dense", grad_check([&] { return project(drm_forward(xd, dense, gates), seed); },
                                                  with_input(dense.parameters(), xd)));
         }},
        {"cam", "block",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             for (CamVariant v : {CamVariant::se, CamVariant::cbam})
                 for (bool identity : {false, true}) {
                     auto cam = CamParams::make(16, v, identity, 16, rng);
                     Tensor x = random_tensor({2, 16, 4, 4}, rng);
                     out.emplace_back(std::string(to_string(v)) + (identity ? "+identity" : ""),
                                      grad_check([&] { return project(cam_forward(x, cam), seed); },
                                                 with_input(cam.parameters(), x)));
                 }
         }},
        {"pam", "block",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             PamOptions options;
             options.reduction = 8;
             auto pam = PamParams::make(16, options, rng);
             jitter_bn(pam.drm->bn1, rng);
             jitter_bn(pam.drm->bn2, rng);
             Tensor x = random_tensor({2, 16, 6, 6}, rng);
             const auto gates = random_gates(2, rng);
             out.emplace_back("pam", grad_check([&] { return project(pam_forward(x, pam, gates), seed); },
                                                with_input(pam.parameters(), x)));
         }},
        {"dream", "block",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             auto dream = DreamParams::make(12, rng);
             Tensor e = random_tensor({2, 12}, rng);
             const auto gates = random_gates(2, rng);
             out.emplace_back("dream", grad_check([&] { return project(dream_forward(e, dream, gates), seed); },
                                                  with_input(dream.parameters(), e, "embedding")));
         }},
        {"margin_loss", "loss",
         [](std::uint64_t seed, auto& out) {
             Rng rng(seed);
             Tensor e = random_tensor({4, 6}, rng);
             Tensor w = random_tensor({5, 6}, rng);
             std::vector<std::size_t> labels(4);
             for (auto& l : labels)
                 l = uniform_index(rng, 5);
             for (double m : {0.0, 0.5}) {
                 const MarginConfig cfg{uniform(rng, 4.0, 64.0), m};
                 out.emplace_back(m == 0.0 ? "no_margin" : "margin",
                                  grad_check([&] { return margin_loss(l2_normalize(e), l2_normalize(w), labels, cfg); },
                                             {{"embedding", e}, {"class_weights", w}}));
             }
         }},
    };
    return table;
}

} // namespace

double GradCheckReport::max_rel_error() const
{
    double m = 0.0;
    for (const auto& c : cases)
        m = std::max(m, c.result.max_rel_error);
    return m;
}

const std::vector<std::string>& gradcheck_targets()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out{"primitive", "block", "loss", "all"};
        for (const auto& t : targets())
            out.push_back(t.name);
        return out;
    }();
    return names;
}

GradCheckReport run_gradcheck_suite(std::string_view target, std::uint64_t seed, std::size_t seeds)
{
    std::vector<const Target*> selected;
    for (const auto& t : targets())
        if (target == "all" || target == t.group || target == t.name)
            selected.push_back(&t);
    if (selected.empty())
        throw std::invalid_argument("unknown gradcheck target '" + std::string(target) + "'");
    GradCheckReport report;
    for (const Target* t : selected)
        for (std::uint64_t s = seed; s < seed + seeds; ++s) {
            std::vector<std::pair<std::string, GradCheckResult>> results;
            t->run(s * 7919 + 17, results);
            for (auto& [name, r] : results)
                report.cases.push_back({t->name, name, s, std::move(r)});
        }
    return report;
}

} // namespace pam
