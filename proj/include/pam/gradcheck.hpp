#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pam/tensor.hpp"

namespace pam {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckGroup {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<GradCheckGroup> groups;
};

/// Thrown when the checked program yields a non-finite value; carries the
/// input group and flat coordinate being perturbed (npos for the base point).
class GradCheckError : public std::runtime_error {
public:
    GradCheckError(const std::string& group, std::size_t coordinate, const std::string& what);
    std::string group;
    std::size_t coordinate;
};

/// Compares reverse-mode gradients of a scalar program against central
/// differences. Error per coordinate is |a - n| / max(1, |a|, |n|); the
/// result reports the maximum overall and per input group. `program` must
/// rebuild its graph from `inputs` on every call.
GradCheckResult grad_check(const std::function<Tensor()>& program, const std::vector<NamedTensor>& inputs,
                           double step = 1e-5);

} // namespace pam
