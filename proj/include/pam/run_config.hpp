#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pam/backbone.hpp"
#include "pam/dataset.hpp"
#include "pam/train.hpp"
#include "pam/verification.hpp"

namespace pam {

/// Everything a train/eval run depends on. Text form is INI-like:
/// `[section]` headers, `key = value` lines, `#` comments.
struct RunConfig {
    DatasetConfig dataset;
    PairSetConfig pairs;
    std::size_t folds = 10;
    BackboneConfig backbone = BackboneConfig::toy();
    std::uint64_t model_seed = 1;
    std::string placement = "PAM12";
    ModelOptions model;
    TrainConfig train;
    std::string output_dir = "pam_run";

    /// Defaults of the toy profile (reduction 4 so that 8-channel stages divide).
    static RunConfig defaults();
    /// Cross-field checks; returns every problem found.
    std::vector<std::string> problems() const;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

/// Unset keys keep their defaults. Unknown sections or keys, malformed
/// values and failed cross-field checks are all collected and thrown
/// together as one ConfigError.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Complete, resolved text that parses back to the same configuration.
std::string render_run_config(const RunConfig& cfg);

} // namespace pam
