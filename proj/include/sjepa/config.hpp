#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "sjepa/jepa.hpp"
#include "sjepa/probe.hpp"
#include "sjepa/sparsity.hpp"
#include "sjepa/vit.hpp"

namespace sjepa {

struct OptimizerConfig {
    /// The JEPA term sums squared errors over every target patch, so the
    /// initial loss is in the hundreds; larger rates diverge at this scale.
    double lr = 5e-4;
    double momentum = 0.9;
    std::size_t steps = 500;
    std::size_t batch_size = 64;
    double ema_momentum = 0.996;
};

struct DatasetConfig {
    /// synth-class, synth-count or cifar100
    std::string name = "synth-class";
    std::size_t train_size = 2000;  // synthetic only
    std::size_t test_size = 1000;   // synthetic only
    /// Directory holding train.bin / test.bin for cifar100.
    std::string path;
};

/// Everything that determines a run. Serialized as one flat JSON object.
struct RunConfig {
    ViTConfig vit;
    PredictorConfig predictor;
    MaskParams mask;
    LossConfig loss;
    OptimizerConfig optim;
    DatasetConfig dataset;
    ProbeConfig probe;
    std::uint64_t seed = 0;
    std::string out_dir = "run";

    /// Throws ConfigError on any inconsistent value.
    void validate() const;

    /// Canonical flat JSON (sorted keys).
    std::string to_json() const;
    /// The same without out_dir; this is what checkpoints store, so identical
    /// runs in different directories produce identical files.
    std::string portable_json() const;
    /// Unknown keys, wrong types and invalid values raise ConfigError.
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);

    /// FNV-1a 64 of the canonical JSON without out_dir.
    std::uint64_t hash() const;
};

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace sjepa
