#include "pam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pam {

GradCheckError::GradCheckError(const std::string& group_, std::size_t coordinate_, const std::string& what)
    : std::runtime_error(what), group(group_), coordinate(coordinate_)
{
}

namespace {

constexpr std::size_t kBasePoint = std::numeric_limits<std::size_t>::max();

double evaluate(const std::function<Tensor()>& program, const std::string& group, std::size_t coordinate)
{
    double value = 0.0;
    try {
        NoGradGuard guard;
        value = program().item();
    } catch (const std::domain_error& e) {
        throw GradCheckError(group, coordinate, "non-finite intermediate at " + group + "[" +
                                                    std::to_string(coordinate) + "]: " + e.what());
    }
    if (!std::isfinite(value))
        throw GradCheckError(group, coordinate, "non-finite output at " + group + "[" + std::to_string(coordinate) + "]");
    return value;
}

} // namespace

GradCheckResult grad_check(const std::function<Tensor()>& program, const std::vector<NamedTensor>& inputs,
                           double step)
{
    if (!(step > 0.0))
        throw std::invalid_argument("grad_check: step must be positive");
    for (const auto& in : inputs) {
        if (!in.tensor.requires_grad() || !in.tensor.is_leaf())
            throw std::invalid_argument("grad_check: input '" + in.name + "' must be a leaf requiring grad");
        Tensor t = in.tensor;
        t.zero_grad();
    }

    Tensor out;
    try {
        out = program();
    } catch (const std::domain_error& e) {
        throw GradCheckError("", kBasePoint, std::string("non-finite intermediate at base point: ") + e.what());
    }
    out.backward();

    GradCheckResult result;
    for (const auto& in : inputs) {
        Tensor t = in.tensor;
        const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                          : std::vector<double>(t.numel(), 0.0);
        GradCheckGroup group{in.name, 0.0, 0};
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + step;
            const double plus = evaluate(program, in.name, i);
            values[i] = original - step;
            const double minus = evaluate(program, in.name, i);
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double err = std::abs(analytic[i] - numeric) /
                               std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            if (err > group.max_rel_error) {
                group.max_rel_error = err;
                group.worst_index = i;
            }
        }
        result.max_rel_error = std::max(result.max_rel_error, group.max_rel_error);
        result.groups.push_back(group);
    }
    return result;
}

} // namespace pam
