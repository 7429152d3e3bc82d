#include "pam/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pam {

namespace {

// Smallest threshold with the best accuracy over the given pairs.
double best_threshold(std::vector<std::pair<double, bool>> scored)
{
    std::sort(scored.begin(), scored.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    // Threshold below everything: all pairs predicted "same".
    std::size_t correct = 0;
    for (const auto& s : scored)
        correct += s.second ? 1 : 0;
    std::size_t best = correct;
    double best_t = scored.front().first - 1.0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        // Moving the threshold past scored[i] flips it to "different".
        if (scored[i].second)
            --correct;
        else
            ++correct;
        if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first)
            continue;
        const double t = i + 1 < scored.size() ? 0.5 * (scored[i].first + scored[i + 1].first)
                                               : scored[i].first + 1.0;
        if (correct > best) {
            best = correct;
            best_t = t;
        }
    }
    return best_t;
}

} // namespace

void PairSetConfig::validate() const
{
    if (gallery_per_identity < 1 || probes_per_identity < 1)
        throw std::invalid_argument("pair set needs at least one gallery and one probe per identity");
    if (!(gallery_max_yaw >= 0.0) || gallery_max_yaw > 90.0)
        throw std::invalid_argument("gallery_max_yaw must lie in [0, 90]");
    if (stream == 0)
        throw std::invalid_argument("pair set stream 0 is the training split");
}

double PairSet::pair_yaw(const VerificationPair& p) const
{
    return std::max(std::abs(samples.at(p.a).yaw_deg), std::abs(samples.at(p.b).yaw_deg));
}

PairSet make_pair_set(const DatasetConfig& data, const PairSetConfig& cfg)
{
    data.validate();
    cfg.validate();
    const SampleRenderer renderer(data);
    Rng rng(data.seed * 0xD1B54A32D192ED03ULL + cfg.stream);
    PairSet ps;
    ps.image_size = data.image_size;
    const std::size_t ids = data.identities, g = cfg.gallery_per_identity;
    for (std::size_t id = 0; id < ids; ++id)
        for (std::size_t i = 0; i < g; ++i)
            ps.samples.push_back(renderer.render(id, uniform(rng, -cfg.gallery_max_yaw, cfg.gallery_max_yaw), rng));
    for (std::size_t id = 0; id < ids; ++id)
        for (std::size_t i = 0; i < cfg.probes_per_identity; ++i) {
            const std::size_t probe = ps.samples.size();
            ps.samples.push_back(renderer.render(id, uniform(rng, -90.0, 90.0), rng));
            ps.pairs.push_back({id * g + uniform_index(rng, g), probe, true});
            const std::size_t other = (id + 1 + uniform_index(rng, ids - 1)) % ids;
            ps.pairs.push_back({other * g + uniform_index(rng, g), probe, false});
        }
    return ps;
}

std::size_t yaw_bucket(double yaw_deg)
{
    const double a = std::abs(yaw_deg);
    if (!(a <= 90.0))
        throw std::invalid_argument("yaw " + std::to_string(yaw_deg) + " outside [-90, 90]");
    return a < 30.0 ? 0 : a < 60.0 ? 1 : 2;
}

VerificationResult evaluate_verification(std::span<const double> similarity, const std::vector<bool>& same,
                                         std::span<const double> pair_yaw, std::size_t folds)
{
    const std::size_t n = similarity.size();
    if (n == 0)
        throw std::invalid_argument("verification needs at least one pair");
    if (same.size() != n || pair_yaw.size() != n)
        throw std::invalid_argument("verification: similarity, label and yaw counts differ");
    if (folds == 0)
        throw std::invalid_argument("verification needs at least one fold");
    folds = std::min(folds, n);

    std::vector<bool> correct(n);
    double threshold_sum = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::pair<double, bool>> fit;
        for (std::size_t i = 0; i < n; ++i)
            if (folds == 1 || i % folds != f)
                fit.emplace_back(similarity[i], same[i]);
        const double t = best_threshold(std::move(fit));
        threshold_sum += t;
        for (std::size_t i = f; i < n; i += folds)
            correct[i] = (similarity[i] > t) == same[i];
    }

    VerificationResult r;
    r.threshold = threshold_sum / static_cast<double>(folds);
    std::array<std::size_t, yaw_bucket_count> hits{};
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = yaw_bucket(pair_yaw[i]);
        ++r.bucket_pairs[b];
        hits[b] += correct[i] ? 1 : 0;
        total += correct[i] ? 1 : 0;
    }
    r.accuracy = static_cast<double>(total) / static_cast<double>(n);
    for (std::size_t b = 0; b < yaw_bucket_count; ++b)
        r.bucket_accuracy[b] = r.bucket_pairs[b] == 0
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : static_cast<double>(hits[b]) / static_cast<double>(r.bucket_pairs[b]);
    return r;
}

std::vector<std::vector<double>> embed_samples(Model& model, std::span<const SynthSample> samples,
                                               std::size_t image_size, std::size_t batch)
{
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch) {
        const std::size_t end = std::min(samples.size(), start + batch);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<double> yaws;
        for (std::size_t i : idx)
            yaws.push_back(samples[i].yaw_deg);
        const Tensor e = l2_normalize(model.forward_extract(stack_images(samples, idx, image_size), yaws, Mode::eval));
        const std::size_t d = e.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r)
            out.emplace_back(e.data().begin() + static_cast<std::ptrdiff_t>(r * d),
                             e.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    }
    return out;
}

VerificationResult evaluate_verification(Model& model, const PairSet& pairs, std::size_t folds)
{
    if (pairs.pairs.empty())
        throw std::invalid_argument("verification needs at least one pair");
    const auto emb = embed_samples(model, pairs.samples, pairs.image_size);
    std::vector<double> sim, yaw;
    std::vector<bool> same;
    for (const auto& p : pairs.pairs) {
        sim.push_back(std::inner_product(emb[p.a].begin(), emb[p.a].end(), emb[p.b].begin(), 0.0));
        yaw.push_back(pairs.pair_yaw(p));
        same.push_back(p.same);
    }
    return evaluate_verification(sim, same, yaw, folds);
}

} // namespace pam
