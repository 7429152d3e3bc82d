#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pam/backbone.hpp"
#include "pam/dataset.hpp"

namespace pam {

struct VerificationPair {
    std::size_t a = 0;
    std::size_t b = 0;
    bool same = false;
};

struct PairSetConfig {
    std::size_t gallery_per_identity = 2;
    std::size_t probes_per_identity = 100;
    /// Galleries are near-frontal: |yaw| <= this bound.
    double gallery_max_yaw = 10.0;
    /// Sample stream, distinct from the training split (stream 0).
    std::uint64_t stream = 1;

    void validate() const;
};

/// Held-out renders of the training identities. Every probe (yaw uniform on
/// [-90, 90]) is paired once with a gallery of its own identity and once with
/// a gallery of another identity, so the set is balanced.
struct PairSet {
    std::size_t image_size = 0;
    std::vector<SynthSample> samples;
    std::vector<VerificationPair> pairs;

    /// Larger |yaw| of the two samples.
    double pair_yaw(const VerificationPair& p) const;
};

PairSet make_pair_set(const DatasetConfig& data, const PairSetConfig& cfg);

inline constexpr std::size_t yaw_bucket_count = 3;
/// [0,30) -> 0, [30,60) -> 1, [60,90] -> 2.
std::size_t yaw_bucket(double yaw_deg);

struct VerificationResult {
    double accuracy = 0.0;
    /// NaN for buckets without pairs.
    std::array<double, yaw_bucket_count> bucket_accuracy{};
    std::array<std::size_t, yaw_bucket_count> bucket_pairs{};
    /// Mean of the per-fold thresholds.
    double threshold = 0.0;
};

/// Pair i belongs to fold i % folds. Each fold is classified (same iff
/// similarity > t) with the t that maximizes accuracy on the other folds;
/// ties go to the smallest t. Throws std::invalid_argument on an empty set.
VerificationResult evaluate_verification(std::span<const double> similarity, const std::vector<bool>& same,
                                         std::span<const double> pair_yaw, std::size_t folds = 10);

/// Eval-mode embeddings of every sample, L2-normalized rows, (n, dim).
std::vector<std::vector<double>> embed_samples(Model& model, std::span<const SynthSample> samples,
                                               std::size_t image_size, std::size_t batch = 64);

VerificationResult evaluate_verification(Model& model, const PairSet& pairs, std::size_t folds = 10);

} // namespace pam
