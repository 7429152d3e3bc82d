#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pam/backbone.hpp"
#include "pam/dataset.hpp"
#include "pam/margin_loss.hpp"
#include "pam/verification.hpp"

namespace pam {

/// Step schedule: lr = initial * factor^(number of decay epochs <= epoch).
struct LrSchedule {
    double initial = 0.1;
    std::vector<std::size_t> decay_epochs{4, 5};
    double factor = 0.1;

    /// Rate used throughout the 1-based `epoch`.
    double at(std::size_t epoch) const;
};

struct TrainConfig {
    MarginConfig margin;
    LrSchedule lr;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 6;
    std::uint64_t seed = 1;
    bool shuffle = true;
    /// Mirror each drawn sample with probability 0.5 (yaw sign follows).
    bool flip_augment = true;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    /// Mean training loss over the epoch's batches.
    double loss = 0.0;
    std::optional<VerificationResult> eval;
};

struct TrainResult {
    /// Mean loss over one pass of the epoch-1 batches before any update.
    double initial_loss = 0.0;
    std::vector<EpochMetrics> history;
    std::size_t margin_clamps = 0;
    /// Final class-weight matrix (identities, embedding_dim).
    Tensor class_weights;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Momentum SGD (v = mu v + g + wd p; p -= lr v) on the margin loss over
/// L2-normalized embeddings and class weights. Evaluates `eval` after every
/// epoch when given. Bitwise reproducible for fixed inputs.
TrainResult train(Model& model, const Dataset& data, const PairSet* eval, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Header `epoch,loss,acc,acc_y0_30,acc_y30_60,acc_y60_90`, values %.12g.
std::string metrics_csv(const std::vector<EpochMetrics>& history);

} // namespace pam
