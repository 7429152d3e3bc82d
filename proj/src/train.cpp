#include "pam/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pam/ops.hpp"

namespace pam {

namespace {

struct Batch {
    Tensor images;
    std::vector<double> yaws;
    std::vector<std::size_t> labels;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> idx, std::span<const char> flip)
{
    std::vector<SynthSample> drawn;
    drawn.reserve(idx.size());
    Batch b;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const SynthSample& s = data.samples[idx[k]];
        drawn.push_back(flip[k] ? flip_horizontal(s, data.image_size()) : s);
        b.yaws.push_back(drawn.back().yaw_deg);
        b.labels.push_back(s.label);
    }
    std::vector<std::size_t> all(drawn.size());
    std::iota(all.begin(), all.end(), 0);
    b.images = stack_images(drawn, all, data.image_size());
    return b;
}

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

double LrSchedule::at(std::size_t epoch) const
{
    double lr = initial;
    for (std::size_t e : decay_epochs)
        if (e <= epoch)
            lr *= factor;
    return lr;
}

void TrainConfig::validate() const
{
    margin.validate();
    if (!(lr.initial >= 0.0) || !std::isfinite(lr.initial))
        throw std::invalid_argument("learning rate must be finite and nonnegative");
    if (!(lr.factor > 0.0) || lr.factor > 1.0)
        throw std::invalid_argument("learning-rate decay factor must lie in (0, 1]");
    if (!(momentum >= 0.0) || momentum >= 1.0)
        throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
        throw std::invalid_argument("weight decay must be nonnegative");
    if (batch_size < 2)
        throw std::invalid_argument("batch size must be at least 2 (batch statistics)");
    if (epochs < 1)
        throw std::invalid_argument("epochs must be at least 1");
}

TrainResult train(Model& model, const Dataset& data, const PairSet* eval, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
    cfg.validate();
    const std::size_t n = data.samples.size();
    if (n < 2)
        throw std::invalid_argument("training needs at least two samples");
    for (const auto& s : data.samples)
        if (s.label >= data.config.identities)
            throw std::invalid_argument("sample label " + std::to_string(s.label) + " exceeds identity count");

    const std::size_t dim = model.config().embedding_dim;
    Rng rng(cfg.seed * 0xA24BAED4963EE407ULL + 0x7A1);
    TrainResult result;
    {
        std::vector<double> w(data.config.identities * dim);
        for (double& v : w)
            v = normal(rng);
        result.class_weights = Tensor::from({data.config.identities, dim}, std::move(w), true);
    }
    std::vector<NamedTensor> params = model.parameters();
    params.push_back({"loss.class_weights", result.class_weights});
    std::vector<std::vector<double>> velocity;
    for (const auto& p : params)
        velocity.emplace_back(p.tensor.numel(), 0.0);

    // Batches of fewer than two samples cannot be normalized; such a tail is dropped.
    auto plan_epoch = [&](std::vector<std::size_t>& order, std::vector<char>& flip) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        if (cfg.shuffle)
            for (std::size_t i = n - 1; i > 0; --i)
                std::swap(order[i], order[uniform_index(rng, i + 1)]);
        flip.assign(n, 0);
        if (cfg.flip_augment)
            for (auto& f : flip)
                f = uniform01(rng) < 0.5 ? 1 : 0;
    };
    auto batch_loss = [&](const Batch& b, MarginDiagnostics* diag) {
        const Tensor e = l2_normalize(model.forward_extract(b.images, b.yaws, Mode::train));
        return margin_loss(e, l2_normalize(result.class_weights), b.labels, cfg.margin, diag);
    };
    auto batches = [&](const std::vector<std::size_t>& order, const std::vector<char>& flip, auto&& body) {
        for (std::size_t start = 0; start + 2 <= n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            body(make_batch(data, std::span(order).subspan(start, end - start),
                            std::span(flip).subspan(start, end - start)),
                 start / cfg.batch_size);
        }
    };

    std::vector<std::size_t> order;
    std::vector<char> flip;
    plan_epoch(order, flip);

    {
        // Loss at initialization; running statistics are restored afterwards.
        std::vector<std::vector<double>> saved;
        for (auto& b : model.buffers())
            saved.push_back(*b.values);
        NoGradGuard guard;
        double sum = 0.0;
        std::size_t count = 0;
        batches(order, flip, [&](const Batch& b, std::size_t) {
            sum += batch_loss(b, nullptr).item();
            ++count;
        });
        result.initial_loss = sum / static_cast<double>(count);
        auto bufs = model.buffers();
        for (std::size_t i = 0; i < bufs.size(); ++i)
            *bufs[i].values = saved[i];
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (epoch > 1)
            plan_epoch(order, flip);
        const double lr = cfg.lr.at(epoch);
        double sum = 0.0;
        std::size_t count = 0;
        MarginDiagnostics diag;
        batches(order, flip, [&](const Batch& b, std::size_t step) {
            for (auto& p : params)
                p.tensor.zero_grad();
            Tensor loss;
            try {
                loss = batch_loss(b, &diag);
            } catch (const std::domain_error& e) {
                throw TrainingDiverged("non-finite value at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step + 1) + ": " + e.what());
            }
            if (!std::isfinite(loss.item()))
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step + 1));
            loss.backward();
            for (std::size_t i = 0; i < params.size(); ++i) {
                Tensor& t = params[i].tensor;
                if (!t.has_grad())
                    continue;
                auto value = t.mutable_data();
                const auto grad = t.grad();
                auto& v = velocity[i];
                for (std::size_t j = 0; j < v.size(); ++j) {
                    v[j] = cfg.momentum * v[j] + grad[j] + cfg.weight_decay * value[j];
                    value[j] -= lr * v[j];
                }
            }
            sum += loss.item();
            ++count;
        });
        result.margin_clamps += diag.clamped;

        EpochMetrics m;
        m.epoch = epoch;
        m.loss = sum / static_cast<double>(count);
        if (eval)
            m.eval = evaluate_verification(model, *eval);
        result.history.push_back(m);
        if (on_epoch)
            on_epoch(m);
    }
    return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history)
{
    std::string out = "epoch,loss,acc,acc_y0_30,acc_y30_60,acc_y60_90\n";
    for (const auto& m : history) {
        out += std::to_string(m.epoch) + "," + fmt(m.loss);
        for (int i = 0; i < 4; ++i) {
            out += ",";
            if (m.eval)
                out += fmt(i == 0 ? m.eval->accuracy : m.eval->bucket_accuracy[static_cast<std::size_t>(i - 1)]);
        }
        out += "\n";
    }
    return out;
}

} // namespace pam
