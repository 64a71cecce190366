#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sjepa/data.hpp"
#include "sjepa/vit.hpp"

namespace sjepa {

/// Frozen features, one row per image, row-major [n, d].
struct FeatureTable {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> features;
    std::vector<std::size_t> labels;

    /// Throws ContractError when sizes disagree or a feature is non-finite.
    void validate() const;
    double at(std::size_t row, std::size_t col) const { return features[row * d + col]; }
};

/// Encodes every patch of every image and mean-pools over patches. Images are
/// processed on the worker pool; the result does not depend on the thread count.
FeatureTable extract_features(const data::Dataset& dataset, const ViTConfig& cfg, const ViTParams& encoder);

/// Mean-pools rows of precomputed patch embeddings: [n_patches, d] -> [d].
std::vector<double> mean_pool(const Tensor& patch_embeddings);

struct ProbeConfig {
    double lr = 0.1;
    std::size_t epochs = 500;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

/// Softmax regression on features standardized with the training-table statistics.
struct LinearProbe {
    std::size_t d = 0;
    std::size_t classes = 0;
    std::vector<double> weight;  // [d, classes]
    std::vector<double> bias;    // [classes]
    std::vector<double> feature_mean;
    std::vector<double> feature_std;
    std::vector<double> loss_history;  // objective after every epoch

    /// Logits of one table row, [classes].
    std::vector<double> logits(const FeatureTable& table, std::size_t row) const;
};

/// Mean cross-entropy plus (weight_decay / 2) * ||W||^2 over a standardized table,
/// with its analytic gradient written into grad_w / grad_b when non-null.
double probe_objective(const LinearProbe& probe, const FeatureTable& standardized, double weight_decay,
                       std::vector<double>* grad_w, std::vector<double>* grad_b);

/// Copy of `table` standardized with the probe's feature statistics.
FeatureTable standardize(const LinearProbe& probe, const FeatureTable& table);

/// Full-batch gradient descent. A step that would raise the objective is
/// rejected and the step size halved, so the recorded loss never increases.
/// Throws ContractError when fewer than two classes are present.
LinearProbe train_linear_probe(const FeatureTable& train, const ProbeConfig& cfg = {},
                               std::size_t num_classes = 0);

/// Fraction of rows whose argmax logit equals the label; ties go to the lowest
/// class index. Throws ContractError on an empty table or width mismatch.
double top1_accuracy(const LinearProbe& probe, const FeatureTable& table);

/// Same rule applied to raw logits ([n, classes], row-major).
double top1_from_logits(const std::vector<double>& logits, std::size_t classes, const std::vector<std::size_t>& labels);

}  // namespace sjepa
