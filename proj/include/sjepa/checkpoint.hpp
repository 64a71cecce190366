#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sjepa/params.hpp"

namespace sjepa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Section {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const Section&) const = default;
};

/// Binary container, all integers little-endian:
///   "SJCK", u32 version, u64 config hash, u64 step,
///   u32 config length + config JSON bytes, u32 section count, then per section
///   u32 name length + name, u32 rank, u64 dims[rank], f64 payload[numel].
struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::uint64_t step = 0;
    std::string config_json;
    std::vector<Section> sections;

    const Section* find(const std::string& name) const;
    /// Throws FormatError naming the missing section.
    const Section& get(const std::string& name) const;
    bool has_prefix(const std::string& prefix) const;
    void put(Section s);  // replaces a section of the same name

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws ConfigError when the hash differs, unless force is set.
void check_config_hash(const Checkpoint& ckpt, std::uint64_t expected, bool force);

/// Stores each parameter as section prefix + name.
void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params);
/// Copies section values into the existing tensors; a missing section or a
/// shape mismatch throws FormatError.
void restore_params(const Checkpoint& ckpt, const std::string& prefix, const ParamSet& params);

}  // namespace sjepa
