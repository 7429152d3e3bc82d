#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pam/random.hpp"
#include "pam/tensor.hpp"

namespace pam {

enum class YawLaw { frontal_skewed, uniform };
const char* to_string(YawLaw law);
YawLaw parse_yaw_law(const std::string& text);

inline constexpr std::uint32_t dataset_generator_version = 1;

struct DatasetConfig {
    std::uint64_t seed = 1;
    std::size_t identities = 20;
    std::size_t per_identity = 50;
    std::size_t image_size = 32;
    YawLaw yaw_law = YawLaw::frontal_skewed;
    double noise = 1.6;

    void validate() const;
    bool operator==(const DatasetConfig&) const = default;
};

/// Single-channel image, row-major (image_size x image_size).
struct SynthSample {
    std::vector<double> image;
    std::size_t label = 0;
    double yaw_deg = 0.0;
};

struct Dataset {
    DatasetConfig config;
    std::vector<SynthSample> samples;

    std::size_t image_size() const { return config.image_size; }
};

/// Corruption strength in [0, 1]: 0 at frontal, 1 at full profile, smooth
/// and strictly increasing in |yaw| on (0, 90].
double corruption_severity(double yaw_deg);

/// Identity templates are fixed by cfg.seed; `stream` selects an independent
/// draw of samples (0 = training split). Each identity gets `per_identity`
/// samples with yaw from `law`.
std::vector<SynthSample> generate_samples(const DatasetConfig& cfg, std::uint64_t stream, std::size_t per_identity,
                                          YawLaw law);
/// Training split: stream 0, cfg.per_identity samples, cfg.yaw_law.
Dataset generate_dataset(const DatasetConfig& cfg);

/// Holds the identity templates of one seed.
class SampleRenderer {
public:
    explicit SampleRenderer(const DatasetConfig& cfg);

    const std::vector<double>& identity_template(std::size_t label) const;
    /// Template -> sheared horizontal shift toward the yaw side -> one-sided
    /// occlusion from the far edge -> additive noise. All but the noise scale
    /// with severity.
    SynthSample render(std::size_t label, double yaw_deg, Rng& noise_rng) const;

private:
    DatasetConfig cfg_;
    std::vector<std::vector<double>> templates_;
};

/// Mirror left-right and negate yaw. The generator is mirror-consistent:
/// the flip of a sample at yaw y is distributed as a sample at -y.
SynthSample flip_horizontal(const SynthSample& s, std::size_t image_size);

/// (batch, 1, size, size) images of the selected samples.
Tensor stack_images(std::span<const SynthSample> samples, std::span<const std::size_t> indices,
                    std::size_t image_size);

class DatasetFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes `<dir>/manifest.txt` and `<dir>/samples.bin`.
///
/// samples.bin, little-endian: magic "PAMDATA\0", u32 format version,
/// u64 sample count, u32 image size, then per sample u32 label, f64 yaw,
/// image_size^2 f64 pixels. The manifest lists counts, shape, seed and the
/// generator version as `key = value` lines.
void export_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

} // namespace pam
