#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pam/gradcheck.hpp"

namespace pam {

struct GradCheckCase {
    std::string target;
    std::string name;
    std::uint64_t seed = 0;
    GradCheckResult result;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;

    double max_rel_error() const;
    bool passed(double tolerance = 1e-5) const { return !cases.empty() && max_rel_error() <= tolerance; }
};

/// Group names ("primitive", "block", "loss", "all") followed by the
/// individual targets they expand to.
const std::vector<std::string>& gradcheck_targets();

/// Runs every case of `target` on `seeds` consecutive seeds starting at
/// `seed`. Throws std::invalid_argument for an unknown target.
GradCheckReport run_gradcheck_suite(std::string_view target, std::uint64_t seed, std::size_t seeds = 10);

} // namespace pam
