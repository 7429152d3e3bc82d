#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pam/backbone.hpp"

namespace pam {

/// Binary container, all integers little-endian:
///
///   magic    8 bytes  "PAMCKPT\0"
///   version  u32      checkpoint_format_version
///   config   u32 length + UTF-8 bytes (resolved run configuration echo)
///   count    u32      number of arrays
///   per array:
///     name   u32 length + bytes
///     dtype  u8       1 = float64 (IEEE-754 binary64, little-endian)
///     kind   u8       0 = trainable parameter, 1 = buffer (BN running stat)
///     rank   u32
///     dims   rank x u64
///     data   product(dims) x 8 bytes
inline constexpr std::uint32_t checkpoint_format_version = 1;

struct CheckpointArray {
    std::string name;
    bool trainable = true;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint32_t version = checkpoint_format_version;
    std::string config_text;
    std::vector<CheckpointArray> arrays;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when the file's format version differs from this build's.
class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

Checkpoint snapshot(Model& model, std::string config_text);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every array into the model; names, kinds and shapes must match exactly.
void restore(Model& model, const Checkpoint& ckpt);

} // namespace pam
